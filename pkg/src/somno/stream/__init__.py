"""Live staging over TCP: wire protocol, per-connection sessions, server and replay client."""

from .protocol import BYE, DATA, HELLO, STAGE, USE_SERVER_DEFAULT, Bye, Data, Hello, Stage, decode_frame, encode_frame, read_frame
from .server import StageServer, make_server, serve
from .session import Session, batch_predict

__all__ = [
    "BYE",
    "DATA",
    "HELLO",
    "STAGE",
    "USE_SERVER_DEFAULT",
    "Bye",
    "Data",
    "Hello",
    "Session",
    "Stage",
    "StageServer",
    "batch_predict",
    "decode_frame",
    "encode_frame",
    "make_server",
    "read_frame",
    "serve",
]

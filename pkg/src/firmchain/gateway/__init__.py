from .app import GatewayServer, create_app, serve
from .client import (
    DEFAULT_RPC_URL,
    ENV_RPC_URL,
    GatewayUnreachable,
    RpcClient,
    RpcError,
    client_connect,
)
from .methods import METHODS, handle_body, rpc_dispatch
from .models import RpcRequest, RpcResponse

__all__ = [
    "DEFAULT_RPC_URL", "ENV_RPC_URL", "GatewayServer", "GatewayUnreachable", "METHODS",
    "RpcClient", "RpcError", "RpcRequest", "RpcResponse", "client_connect", "create_app",
    "handle_body", "rpc_dispatch", "serve",
]

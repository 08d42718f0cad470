"""Wire models for the ``/rpc`` endpoint."""

from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, StrictInt, StrictStr

PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602
INTERNAL_ERROR = -32603
# ledger-level failures; the message starts with the ledger error identifier
TX_REJECTED = -32000
NOT_FOUND = -32001
CALL_REVERTED = -32002
LEDGER_ERROR = -32003


class RpcRequest(BaseModel):
    model_config = ConfigDict(extra="ignore")

    id: StrictInt
    method: StrictStr
    params: Any = Field(default_factory=list)


class RpcErrorBody(BaseModel):
    code: int
    message: str


class RpcResponse(BaseModel):
    id: Optional[int] = None
    result: Any = None
    error: Optional[RpcErrorBody] = None

    def to_wire(self) -> dict:
        """Exactly one of ``result`` / ``error`` is emitted."""
        if self.error is not None:
            return {"id": self.id, "error": self.error.model_dump()}
        return {"id": self.id, "result": self.result}

    @classmethod
    def fail(cls, id_: int | None, code: int, message: str) -> "RpcResponse":
        return cls(id=id_, error=RpcErrorBody(code=code, message=message))

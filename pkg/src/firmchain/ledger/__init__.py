from .chain import (
    REVERTED,
    SUCCESS,
    Account,
    Block,
    CallError,
    ChainCorrupt,
    Genesis,
    Ledger,
    LedgerError,
    NotFound,
    Receipt,
    TxRejected,
    load_genesis_file,
    wei_to_eth,
)
from .encoding import Address
from .execution import Event, ExecutionContext, NativeContract, Revert
from .gas import (
    CREATE_METHOD,
    DEVNET,
    ETHER,
    GWEI,
    PROFILES,
    SEPOLIA_PAPER,
    CalibrationProfile,
    GasSchedule,
    load_profile,
)
from .keys import Wallet
from .storage import ChainFile, load_chain
from .transactions import SignedTransaction, Transaction

__all__ = [
    "Account", "Address", "Block", "CallError", "ChainCorrupt", "ChainFile", "CREATE_METHOD",
    "CalibrationProfile", "DEVNET", "ETHER", "Event", "ExecutionContext", "GWEI", "GasSchedule",
    "Genesis", "Ledger", "LedgerError", "NativeContract", "NotFound", "PROFILES", "Receipt",
    "REVERTED", "Revert", "SEPOLIA_PAPER", "SUCCESS", "SignedTransaction", "Transaction",
    "TxRejected", "Wallet", "load_chain", "load_genesis_file", "load_profile", "wei_to_eth",
]

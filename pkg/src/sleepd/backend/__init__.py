from .base import (
    EFFORTS,
    Backend,
    ChatRequest,
    ChatResponse,
    Message,
    Output,
    RetryingBackend,
    RetryPolicy,
    ToolCall,
    ToolSpec,
    Usage,
    count_tokens_proxy,
)
from .mock import MockBackend, Scripted, Substring, load_script, meta, script
from .remote import RemoteBackend

__all__ = [
    "EFFORTS",
    "Backend",
    "ChatRequest",
    "ChatResponse",
    "Message",
    "MockBackend",
    "Output",
    "RemoteBackend",
    "RetryPolicy",
    "RetryingBackend",
    "Scripted",
    "Substring",
    "ToolCall",
    "ToolSpec",
    "Usage",
    "count_tokens_proxy",
    "load_script",
    "meta",
    "script",
]

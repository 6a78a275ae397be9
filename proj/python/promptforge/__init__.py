"""Text annotation with chat models and evolutionary prompt optimization.

Datasets, prompts, policies and configs are plain dicts; see the README for
their keys. A provider is None (live endpoint, key from PROMPTFORGE_API_KEY),
a {"rules": [...], "default": ...} dict, or a callable (messages, variant) -> str.
"""

from ._promptforge import (
    AuthError,
    CacheError,
    Cancelled,
    DataError,
    Error,
    InvalidArgument,
    MalformedProviderReply,
    MissingGold,
    ParseError,
    ProviderError,
    ScriptMiss,
    StratifyWithoutGold,
    TooFewLabelled,
    TransportError,
    UnknownLabel,
    VersionError,
    evaluate,
    label,
    load_dataset,
    micro_f1,
    normalize_label,
    optimize,
    read_run_log,
    run_cli,
    save_dataset,
    split_dataset,
    wald_ci,
)

__version__ = "0.1.0"

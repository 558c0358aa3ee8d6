"""Static and emulated-dynamic de-obfuscation of malicious PowerShell.

The package peels layered obfuscation (string tricks, Base64/binary
encodings, Deflate/Gzip compression) without ever executing the script,
then emulates the cleaned code against a whitelist interpreter to recover
behavior: downloads, process starts, environment-variable reads, dropped
files, and indicators of compromise.

Typical use::

    from pspeel import analyze
    report = analyze(open("sample.ps1").read())
    print(report.pattern, [i.defanged for i in report.iocs])
"""

from .behavior import classify_pattern, defang, extract_env_vars, extract_iocs, refang
from .decoder import (
    InvalidBase64Error,
    MalformedGroupError,
    UndecodableBytesError,
    bytes_to_text,
    decode_base64,
    decode_binary,
    decompress,
    store_payload,
)
from .detector import detect_layer
from .model import (
    ActionKind,
    ActionRecord,
    AnalysisReport,
    AntiDebugKind,
    EnvUsage,
    InterceptedEval,
    Ioc,
    IocKind,
    LayerType,
    PatternKind,
    ReportStatus,
    ScriptText,
    StageTrace,
    TechniqueTag,
)
from .obfuscator import LayerRequest, gen_corpus, obfuscate_layers, parse_layer_spec
from .pipeline import (
    CorpusStats,
    analyze,
    analyze_corpus,
    layer_key,
    report_json,
    write_stats_csv,
)
from .preprocess import ScriptSyntaxError, cleanup, join_multiline, strip_antidebug, syntax_check
from .sandbox import EmulationBudgetError, EmulationResult, FetchPolicy, HttpClient, emulate
from .stringdeobf import apply_string_pass

__all__ = [
    "ActionKind",
    "ActionRecord",
    "AnalysisReport",
    "AntiDebugKind",
    "CorpusStats",
    "EmulationBudgetError",
    "EmulationResult",
    "EnvUsage",
    "FetchPolicy",
    "HttpClient",
    "InterceptedEval",
    "InvalidBase64Error",
    "Ioc",
    "IocKind",
    "LayerRequest",
    "LayerType",
    "MalformedGroupError",
    "PatternKind",
    "ReportStatus",
    "ScriptSyntaxError",
    "ScriptText",
    "StageTrace",
    "TechniqueTag",
    "UndecodableBytesError",
    "analyze",
    "analyze_corpus",
    "apply_string_pass",
    "bytes_to_text",
    "classify_pattern",
    "cleanup",
    "decode_base64",
    "decode_binary",
    "decompress",
    "defang",
    "detect_layer",
    "emulate",
    "extract_env_vars",
    "extract_iocs",
    "gen_corpus",
    "join_multiline",
    "layer_key",
    "obfuscate_layers",
    "parse_layer_spec",
    "refang",
    "report_json",
    "store_payload",
    "strip_antidebug",
    "syntax_check",
    "write_stats_csv",
]

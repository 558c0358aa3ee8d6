from itertools import combinations

from pspeel.behavior import (
    PATTERN_ROWS,
    classify_pattern,
    defang,
    extract_env_vars,
    extract_iocs,
    refang,
)
from pspeel.model import ActionKind, ActionRecord, EnvUsage, IocKind, PatternKind


def acts(*kinds):
    return [ActionRecord(kind=k, detail="x") for k in kinds]


D = ActionKind.DOWNLOAD
PS = ActionKind.PROC_START
SE = ActionKind.SHELL_EXEC
PK = ActionKind.PROC_KILL
ML = ActionKind.MEM_LOAD
VM = ActionKind.VAR_MANIP


# ------------------------------------------------------------ pattern rows


def test_down_exec() -> None:
    assert classify_pattern(acts(D, PS)) is PatternKind.DOWN_EXEC


def test_down_shell() -> None:
    assert classify_pattern(acts(D, SE)) is PatternKind.DOWN_SHELL


def test_exec_shell() -> None:
    assert classify_pattern(acts(D, PS, SE)) is PatternKind.EXEC_SHELL


def test_exec_var() -> None:
    assert classify_pattern(acts(D, PS, VM)) is PatternKind.EXEC_VAR


def test_shell_kill() -> None:
    assert classify_pattern(acts(D, SE, VM, PK)) is PatternKind.SHELL_KILL


def test_mem_exec() -> None:
    assert classify_pattern(acts(PS, ML)) is PatternKind.MEM_EXEC


def test_empty_is_unclassified() -> None:
    assert classify_pattern([]) is PatternKind.UNCLASSIFIED


def test_superset_is_unclassified() -> None:
    assert classify_pattern(acts(D, PS, SE, VM)) is PatternKind.UNCLASSIFIED


def test_duplicates_collapse_to_set() -> None:
    assert classify_pattern(acts(D, D, D, PS)) is PatternKind.DOWN_EXEC


def test_rows_are_pairwise_distinct() -> None:
    sets = [row for row, _pattern in PATTERN_ROWS]
    assert len(sets) == 6
    for a, b in combinations(sets, 2):
        assert a != b


def test_classification_is_deterministic() -> None:
    for row, pattern in PATTERN_ROWS:
        assert classify_pattern(acts(*row)) is pattern


# -------------------------------------------------------- env aggregation


def test_env_vars_aggregate_by_name_and_usage() -> None:
    events = [("APPDATA", EnvUsage.PATH_BUILD), ("APPDATA", EnvUsage.PROCESS_ARG)]
    assert extract_env_vars(events) == [
        ("APPDATA", EnvUsage.PATH_BUILD, 1),
        ("APPDATA", EnvUsage.PROCESS_ARG, 1),
    ]


def test_env_vars_count_repeats() -> None:
    events = [("temp", EnvUsage.PATH_BUILD)] * 3 + [("TEMP", EnvUsage.OTHER)]
    rows = extract_env_vars(events)
    assert rows == [("TEMP", EnvUsage.PATH_BUILD, 3), ("TEMP", EnvUsage.OTHER, 1)]


def test_env_vars_sorted_by_count_then_name() -> None:
    events = ([("WINDIR", EnvUsage.OTHER)] * 2
              + [("APPDATA", EnvUsage.PATH_BUILD)])
    rows = extract_env_vars(events)
    assert [r[0] for r in rows] == ["WINDIR", "APPDATA"]


def test_env_vars_static_fallback() -> None:
    script = "Write-Output $env:WINDIR; Write-Output $env:windir"
    assert extract_env_vars([], script) == [("WINDIR", EnvUsage.OTHER, 2)]


def test_env_vars_no_double_count_when_emulated() -> None:
    script = "$p = $env:TEMP + '\\a.exe'"
    events = [("TEMP", EnvUsage.PATH_BUILD)]
    assert extract_env_vars(events, script) == [("TEMP", EnvUsage.PATH_BUILD, 1)]


def test_env_vars_empty() -> None:
    assert extract_env_vars([]) == []
    assert extract_env_vars([], "Write-Output 'nothing here'") == []


# ----------------------------------------------------------------- defang


def test_defang_url_host_only() -> None:
    assert (defang("http://example.com/malware.exe")
            == "hxxp://example[.]com/malware.exe")


def test_defang_https_and_port() -> None:
    assert defang("https://a.b:8080/x.ps1") == "hxxps://a[.]b:8080/x.ps1"


def test_defang_ip() -> None:
    assert defang("http://203.0.113.9/~zebra/a.exe") \
        == "hxxp://203[.]0[.]113[.]9/~zebra/a.exe"


def test_refang_inverts_defang() -> None:
    urls = ["http://example.com/malware.exe", "https://a.b.c/d/e.f?g=1",
            "http://203.0.113.9:81/x", "http://single/x.y"]
    for url in urls:
        assert refang(defang(url)) == url


# ------------------------------------------------------------------- iocs


def test_iocs_from_download_action() -> None:
    actions = acts(D)
    actions[0] = ActionRecord(kind=D, detail="http://example.com/malware.exe")
    iocs = extract_iocs(actions)
    by_kind = {i.kind: i for i in iocs}
    assert by_kind[IocKind.URL].raw == "http://example.com/malware.exe"
    assert by_kind[IocKind.URL].defanged == "hxxp://example[.]com/malware.exe"
    assert by_kind[IocKind.DOMAIN].raw == "example.com"
    assert by_kind[IocKind.DOMAIN].defanged == "example[.]com"


def test_iocs_ip_host_kind() -> None:
    actions = [ActionRecord(kind=D, detail="http://203.0.113.9/a.exe")]
    iocs = extract_iocs(actions)
    kinds = {i.kind for i in iocs}
    assert IocKind.IP in kinds and IocKind.DOMAIN not in kinds


def test_iocs_from_script_literal_and_dedup() -> None:
    actions = [ActionRecord(kind=D, detail="http://example.com/malware.exe")]
    script = "Invoke-WebRequest 'http://example.com/malware.exe'"
    iocs = extract_iocs(actions, script)
    urls = [i for i in iocs if i.kind is IocKind.URL]
    assert len(urls) == 1


def test_iocs_recognize_defanged_input() -> None:
    iocs = extract_iocs([], "see hxxp://a[.]b/c for payload")
    (url,) = [i for i in iocs if i.kind is IocKind.URL]
    assert url.raw == "http://a.b/c"
    assert url.defanged == "hxxp://a[.]b/c"


def test_iocs_dropped_files() -> None:
    (path,) = extract_iocs([], "", ["%APPDATA%\\scvkem.exe"])
    assert path.kind is IocKind.FILE_PATH
    assert path.raw == "%APPDATA%\\scvkem.exe" == path.defanged


def test_iocs_unresolved_details_skipped() -> None:
    actions = [ActionRecord(kind=D, detail="<unresolved url>")]
    assert extract_iocs(actions) == []


def test_iocs_defanged_never_clickable() -> None:
    actions = [ActionRecord(kind=D, detail="http://example.com/malware.exe"),
               ActionRecord(kind=D, detail="https://203.0.113.9/x")]
    script = "also hxxp://foo[.]example[.]org/a.ps1 and http://plain.net/b"
    for ioc in extract_iocs(actions, script, ["C:\\tmp\\a.exe"]):
        assert "http://" not in ioc.defanged
        assert "https://" not in ioc.defanged
        if ioc.kind in (IocKind.DOMAIN, IocKind.IP):
            assert "." not in ioc.defanged.replace("[.]", "")


def test_iocs_empty() -> None:
    assert extract_iocs([], "Write-Output 'nothing'") == []

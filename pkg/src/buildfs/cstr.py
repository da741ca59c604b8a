"""C-style string escaping shared by the text format and the trace decoder."""

from __future__ import annotations

_DECODE = {
    "n": "\n", "t": "\t", "r": "\r", "v": "\v", "f": "\f",
    "a": "\a", "b": "\b", "e": "\x1b", '"': '"', "'": "'", "\\": "\\",
}

_ENCODE = {
    "\n": "\\n", "\t": "\\t", "\r": "\\r", "\v": "\\v", "\f": "\\f",
    "\a": "\\a", "\b": "\\b", '"': '\\"', "\\": "\\\\",
}


def decode(body: str) -> str:
    """Decode the contents of a double-quoted C string literal."""
    if "\\" not in body:
        return body
    out: list[str] = []
    i, n = 0, len(body)
    while i < n:
        c = body[i]
        if c != "\\":
            out.append(c)
            i += 1
            continue
        i += 1
        if i >= n:
            out.append("\\")
            break
        e = body[i]
        if e in _DECODE:
            out.append(_DECODE[e])
            i += 1
        elif e == "x":
            j = i + 1
            while j < n and j - i <= 2 and body[j] in "0123456789abcdefABCDEF":
                j += 1
            if j > i + 1:
                out.append(chr(int(body[i + 1:j], 16)))
                i = j
            else:
                out.append("x")
                i += 1
        elif e in "01234567":
            j = i
            while j < n and j - i < 3 and body[j] in "01234567":
                j += 1
            out.append(chr(int(body[i:j], 8)))
            i = j
        else:
            out.append(e)
            i += 1
    return "".join(out)


def encode(text: str) -> str:
    """Encode *text* as a double-quoted literal; printable unicode stays raw."""
    out = ['"']
    for c in text:
        if c in _ENCODE:
            out.append(_ENCODE[c])
        elif c.isprintable() or ord(c) > 127:
            out.append(c)
        else:
            out.append(f"\\x{ord(c):02x}")
    out.append('"')
    return "".join(out)


def scan_quoted(text: str, start: int) -> tuple[str, int]:
    """Scan a double-quoted literal beginning at text[start] == '"'.

    Returns the decoded contents and the index one past the closing quote.
    Raises ValueError on an unterminated literal.
    """
    i = start + 1
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\\":
            i += 2
            continue
        if c == '"':
            return decode(text[start + 1:i]), i + 1
        i += 1
    raise ValueError("unterminated string literal")

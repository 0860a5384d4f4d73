"""Character-level tokenizer: printable ASCII plus newline and four specials."""
from __future__ import annotations

from ..errors import DataError

PAD, BOS, EOS, SEP = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<sep>")
CHARS = "\n" + "".join(chr(c) for c in range(32, 127))


class UnsupportedCharacter(DataError):
    pass


class CharTokenizer:
    """Maps each supported character to one id; digits are single symbols."""

    pad_id, bos_id, eos_id, sep_id = PAD, BOS, EOS, SEP

    def __init__(self, chars: str = CHARS):
        self.symbols = list(SPECIALS) + list(chars)
        self._index = {ch: i + len(SPECIALS) for i, ch in enumerate(chars)}

    @property
    def vocab_size(self) -> int:
        return len(self.symbols)

    def token_id(self, ch: str) -> int:
        try:
            return self._index[ch]
        except KeyError:
            raise UnsupportedCharacter(f"character {ch!r} is not in the vocabulary") from None

    def encode(self, text: str, bos: bool = False, eos: bool = False) -> list[int]:
        ids = [self.token_id(ch) for ch in text]
        if bos:
            ids.insert(0, BOS)
        if eos:
            ids.append(EOS)
        return ids

    def decode(self, ids, stop_at_eos: bool = True) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i == EOS and stop_at_eos:
                break
            if i < len(SPECIALS):
                continue
            out.append(self.symbols[i])
        return "".join(out)

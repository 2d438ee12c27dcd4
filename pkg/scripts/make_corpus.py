"""Generate the bundled character-level training corpus.

The text is synthetic English-like prose from a small seeded grammar, so it
carries no third-party copyright. Running this script reproduces
``src/spikegpt/corpora/corpus.txt`` byte for byte.

    python scripts/make_corpus.py [--bytes 1000000] [--seed 1234]
"""
import argparse
import random
from pathlib import Path

NOUNS = """river mountain village garden farmer soldier teacher letter window winter summer
forest harbor ship captain city merchant road bridge stone candle market kingdom
doctor student child mother father brother sister friend stranger horse dog bird
book story song voice morning evening night storm wind island river valley tower
king queen servant lamp table door house field river lake sea coast cloud sky
machine engine clock wheel paper pen chair window letter garden orchard meadow
painter poet sailor miller baker weaver scholar judge priest widow orphan thief""".split()
ADJS = """old young quiet bright dark cold warm small great long short heavy gentle
strange silent golden broad narrow ancient proud humble patient restless weary
distant green grey white black red blue clever foolish honest careful sudden""".split()
VERBS_T = """found carried watched followed opened closed remembered wrote built
crossed answered praised forgot visited painted mended sold bought guarded
discovered left reached kept lost welcomed""".split()
VERBS_I = """waited slept laughed wandered returned vanished arrived listened
trembled smiled wept rested sang worked hesitated""".split()
ADVS = """slowly quietly suddenly carefully again soon often always never gladly
late early together alone""".split()
PREPS = "near beyond under over across through beside behind toward into from with".split()
NAMES = """Anna Thomas Margaret Henry Clara Samuel Eliza Robert Martha John Lucy Peter
Helen George Alice Walter""".split()
CONJ = ["and", "but", "so", "while", "because", "although", "when"]
SAYS = ["said", "asked", "replied", "whispered", "cried"]


class Grammar:
    def __init__(self, rng: random.Random):
        self.r = rng

    def c(self, seq):
        return self.r.choice(seq)

    def np_(self):
        r = self.r.random()
        if r < 0.15:
            return self.c(NAMES)
        det = self.c(["the", "the", "a", "his", "her", "their", "that", "every"])
        if self.r.random() < 0.45:
            np_ = f"{det} {self.c(ADJS)} {self.c(NOUNS)}"
        else:
            np_ = f"{det} {self.c(NOUNS)}"
        if det == "a" and np_.split()[1][0] in "aeiou":
            np_ = "an" + np_[1:]
        if self.r.random() < 0.2:
            np_ += f" of the {self.c(NOUNS)}"
        return np_

    def vp(self):
        if self.r.random() < 0.6:
            vp = f"{self.c(VERBS_T)} {self.np_()}"
        else:
            vp = self.c(VERBS_I)
        if self.r.random() < 0.35:
            vp += f" {self.c(PREPS)} {self.np_()}"
        if self.r.random() < 0.2:
            vp += f" {self.c(ADVS)}"
        return vp

    def clause(self):
        return f"{self.np_()} {self.vp()}"

    def sentence(self):
        r = self.r.random()
        if r < 0.12:
            q = self.clause()
            s = f'"{q[0].upper()}{q[1:]}," {self.c(SAYS)} {self.c(NAMES)}.'
            return s
        s = self.clause()
        if r < 0.45:
            s += f" {self.c(CONJ)} {self.clause()}"
        if self.r.random() < 0.15:
            s = f"{self.c(['In the morning', 'At last', 'That winter', 'Once', 'Later'])}, {s}"
        end = "." if self.r.random() < 0.9 else self.c(["!", "?", ";"])
        if end == ";":
            s += f"; {self.clause()}."
        else:
            s += end
        return s[0].upper() + s[1:]

    def paragraph(self):
        return " ".join(self.sentence() for _ in range(self.r.randint(3, 8)))


def generate(n_bytes: int, seed: int) -> str:
    g = Grammar(random.Random(seed))
    parts, size, chapter = [], 0, 1
    while size < n_bytes:
        if g.r.random() < 0.04:
            p = f"CHAPTER {chapter}"
            chapter += 1
        else:
            p = g.paragraph()
        parts.append(p)
        size += len(p) + 2
    return "\n\n".join(parts)[:n_bytes] + "\n"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bytes", type=int, default=1_000_000)
    ap.add_argument("--seed", type=int, default=1234)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src/spikegpt/corpora/corpus.txt"))
    args = ap.parse_args()
    text = generate(args.bytes, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    print(f"wrote {len(text)} chars, {len(set(text))} distinct, to {out}")


if __name__ == "__main__":
    main()

"""Hand-built networks that reproduce each task's true next-symbol distribution.

The exact goldens use the ``normalize`` output transform and integer-valued
hidden state (counters, or base-k stacks held in a single unit). The
``*_diff`` variants use only linear/relu units and a softmax output so they
can be trained by gradient descent; they match the true distribution only
approximately.
"""
from __future__ import annotations

from fractions import Fraction
from importlib import resources

from .grammar import EOS, START
from .network import Connection, Network, Unit, input_id, make_io_units, output_id

F = Fraction
GOLDEN_NAMES = ("anbn", "anbncn", "dyck1", "dyck2", "arithmetic", "toy_english")
DIFF_GOLDEN_NAMES = ("anbn_diff", "anbncn_diff", "dyck1_diff")


class _Builder:
    def __init__(self, alphabet, transform="normalize"):
        self.alphabet = tuple(alphabet)
        self.transform = transform
        self.units = {u.id: u for u in make_io_units(self.alphabet)}
        self.conns: list[Connection] = []

    @staticmethod
    def ref(name: str) -> str:
        # "x:sym" -> input, "y:sym" -> output, else hidden id
        if name.startswith("x:"):
            return input_id(name[2:])
        if name.startswith("y:"):
            return output_id(name[2:])
        return name

    def unit(self, name, act="linear", bias=0, kind="summation"):
        uid = self.ref(name)
        role = self.units[uid].role if uid in self.units else "hidden"
        self.units[uid] = Unit(uid, role, kind, act, F(bias))
        return self

    def fw(self, src, dst, w=1):
        self.conns.append(Connection(self.ref(src), self.ref(dst), F(w), "forward"))
        return self

    def rc(self, src, dst, w=1):
        self.conns.append(Connection(self.ref(src), self.ref(dst), F(w), "recurrent"))
        return self

    def build(self) -> Network:
        return Network(self.alphabet, tuple(self.units.values()), tuple(self.conns), self.transform)


def build_anbn() -> Network:
    b = _Builder("ab")
    b.unit("h0").rc("h0", "h0").fw("x:a", "h0").fw("x:b", "h0", -1)
    b.fw(f"x:{START}", "y:a").fw("x:a", "y:a", F(7, 3))
    b.unit("y:b", "unsigned_step").fw("h0", "y:b")
    b.fw("x:b", f"y:{EOS}").fw("y:b", f"y:{EOS}", -1)
    return b.build()


def build_anbncn() -> Network:
    b = _Builder("abc")
    # h0 = #a - #b, h1 = #b - #c
    b.unit("h0").rc("h0", "h0").fw("x:a", "h0").fw("x:b", "h0", -1)
    b.unit("h1").rc("h1", "h1").fw("x:b", "h1").fw("x:c", "h1", -1)
    b.unit("h2", "unsigned_step").fw("h1", "h2")
    b.unit("h3", "unsigned_step", -1).fw("h2", "h3").fw("x:c", "h3")
    b.fw(f"x:{START}", "y:a").fw("x:a", "y:a", F(7, 3))
    b.unit("y:b", "unsigned_step").fw("h0", "y:b")
    b.fw("x:b", "y:c").fw("y:b", "y:c", -1).fw("h3", "y:c")
    b.fw("x:c", f"y:{EOS}").fw("h3", f"y:{EOS}", -1)
    return b.build()


def build_dyck1() -> Network:
    b = _Builder("[]")
    b.unit("h0").rc("h0", "h0").fw("x:[", "h0").fw("x:]", "h0", -1)
    b.unit(f"y:{EOS}", "relu", 1).fw("h0", f"y:{EOS}", -1)
    b.unit("y:]", "linear", 1).fw(f"y:{EOS}", "y:]", -1)
    b.unit("y:[", "linear", F(1, 2))
    return b.build()


def build_dyck2() -> Network:
    # h4 holds the stack as a base-3 integer: "(" = 1, "[" = 2, top digit least significant.
    b = _Builder(["(", ")", "[", "]"])
    b.unit("h0").fw("x:(", "h0").fw("x:[", "h0")  # push
    b.unit("h1").fw("x:)", "h1").fw("x:]", "h1")  # pop
    b.unit("h2", "floor", F(1, 6)).rc("h4", "h2", F(1, 3))
    b.unit("h3a", kind="multiplication", bias=1).fw("h0", "h3a").rc("h4", "h3a", 3)
    b.unit("h3b", kind="multiplication", bias=1).fw("h1", "h3b").fw("h2", "h3b")
    b.unit("h4").fw("h3a", "h4").fw("h3b", "h4").fw("x:(", "h4").fw("x:[", "h4", 2)
    b.unit("h5", "mod3").fw("h4", "h5")
    b.unit("h6", "unsigned_step").fw("h5", "h6")
    b.unit("y:]", "unsigned_step", -1).fw("h5", "y:]")
    b.fw("h6", "y:)").fw("y:]", "y:)", -1)
    b.unit(f"y:{EOS}", "linear", 1).fw("h6", f"y:{EOS}", -1)
    b.unit("y:(", "linear", F(1, 4)).unit("y:[", "linear", F(1, 4))
    return b.build()


def build_arithmetic() -> Network:
    # h4 holds one base-4 digit per open parenthesis: 1 = first operand, 2 = second.
    b = _Builder(["(", "+", ")", "1"])
    b.unit("h0", "floor", F(1, 8)).rc("h4", "h0", F(1, 4))
    b.unit("h1").fw("h0", "h1").rc("h4", "h1", -1)
    b.unit("h2", kind="multiplication", bias=1).fw("x:(", "h2").rc("h4", "h2")
    b.unit("h3", kind="multiplication", bias=1).fw("x:)", "h3").fw("h1", "h3")
    b.unit("h4").rc("h4", "h4").fw("h2", "h4", 3).fw("x:(", "h4").fw("x:+", "h4").fw("h3", "h4")
    b.unit("h5", "mod4").fw("h4", "h5")
    b.unit("h6", "unsigned_step").fw("h5", "h6")
    b.unit("h7", "unsigned_step", -1).fw("h5", "h7")
    b.unit("h8").fw("x:1", "h8").fw("x:)", "h8")  # an operand was just completed
    b.fw("x:(", "y:(").fw("x:+", "y:(").fw(f"x:{START}", "y:(")
    b.fw("x:(", "y:1", F(67, 33)).fw("x:+", "y:1", F(67, 33))
    b.unit("y:+", "unsigned_step", -1).fw("h8", "y:+").fw("h6", "y:+").fw("h7", "y:+", -1)
    b.unit("y:)", "unsigned_step", -1).fw("h8", "y:)").fw("h7", "y:)")
    b.unit(f"y:{EOS}", "unsigned_step").fw("h8", f"y:{EOS}").fw("h6", f"y:{EOS}", -1)
    return b.build()


def build_toy_english() -> Network:
    b = _Builder(["dogs", "chase", "sleep", "think_that"])
    # h0: open relative clauses before this step
    b.unit("h0", "unsigned_step").rc("h5", "h0")
    b.unit("h1", "unsigned_step", -1).fw("x:dogs", "h1").rc("x:dogs", "h1")  # dogs dogs
    b.unit("h2", "unsigned_step").fw("x:chase", "h2").fw("h0", "h2", -1)  # main verb
    b.unit("h3", "unsigned_step", -1).fw("x:chase", "h3").fw("h0", "h3")  # clause-closing verb
    b.unit("h5").rc("h5", "h5").fw("h1", "h5").fw("h3", "h5", -1)
    b.unit("h6").rc("h6", "h6").fw("h2", "h6")  # inside the object NP
    b.unit("h7", "unsigned_step").fw("h5", "h7")
    b.unit("h8", "unsigned_step", 1).fw("h7", "h8", -1).fw("h6", "h8", -1)
    b.unit("h9", "unsigned_step").fw("h6", "h9").fw("h7", "h9", -1)
    b.unit("h10").fw("x:dogs", "h10", F(3, 4)).fw("h3", "h10")  # an NP may end here
    b.unit("h11", kind="multiplication", bias=1).fw("h10", "h11").fw("h8", "h11")
    b.unit("h12", kind="multiplication", bias=1).fw("h10", "h12").fw("h9", "h12")
    b.fw(f"x:{START}", "y:dogs").fw("x:think_that", "y:dogs").fw("h2", "y:dogs")
    b.fw("x:dogs", "y:dogs", F(1, 4))
    b.fw("h10", "y:chase").fw("h11", "y:chase", F(-66, 100)).fw("h12", "y:chase", -1)
    b.fw("h11", "y:sleep", F(33, 100)).fw("h11", "y:think_that", F(33, 100))
    b.fw("h12", f"y:{EOS}").fw("x:sleep", f"y:{EOS}")
    return b.build()


M = 10


def _relu_indicator(b: _Builder, counter: str, lo: str, hi: str) -> None:
    # lo - hi is 0 for counter <= 0 and 1 for counter >= 1, away from relu kinks.
    b.unit(lo, "relu", F(-1, 2)).fw(counter, lo, 2)
    b.unit(hi, "relu", F(-3, 2)).fw(counter, hi, 2)


def build_anbn_diff() -> Network:
    b = _Builder("ab", "softmax")
    b.unit("h0").rc("h0", "h0").fw("x:a", "h0").fw("x:b", "h0", -1)
    _relu_indicator(b, "h0", "h1", "h2")
    b.fw(f"x:{START}", "y:a", M).fw("x:a", "y:a", F(17, 20))
    b.fw("h1", "y:b", M).fw("h2", "y:b", -M).fw("x:a", "y:b", -M)
    b.fw("x:b", f"y:{EOS}", M).fw("h1", f"y:{EOS}", -M).fw("h2", f"y:{EOS}", M)
    return b.build()


def build_anbncn_diff() -> Network:
    b = _Builder("abc", "softmax")
    b.unit("h0").rc("h0", "h0").fw("x:a", "h0").fw("x:b", "h0", -1)
    b.unit("h1").rc("h1", "h1").fw("x:b", "h1").fw("x:c", "h1", -1)
    _relu_indicator(b, "h0", "h2", "h3")
    _relu_indicator(b, "h1", "h4", "h5")
    b.unit("h6", "relu", -3).fw("h4", "h6", 2).fw("h5", "h6", -2).fw("x:c", "h6", 2)
    b.fw(f"x:{START}", "y:a", M).fw("x:a", "y:a", F(17, 20))
    b.fw("h2", "y:b", M).fw("h3", "y:b", -M).fw("x:a", "y:b", -M)
    b.fw("x:b", "y:c", M).fw("h2", "y:c", -M).fw("h3", "y:c", M).fw("h6", "y:c", M)
    b.unit(f"y:{EOS}", "linear", -M).fw("x:c", f"y:{EOS}", 2 * M).fw("h6", f"y:{EOS}", -M)
    return b.build()


def build_dyck1_diff() -> Network:
    b = _Builder("[]", "softmax")
    b.unit("h0").rc("h0", "h0").fw("x:[", "h0").fw("x:]", "h0", -1)
    _relu_indicator(b, "h0", "h1", "h2")
    k = F(7, 10) + M
    b.unit("y:]", "linear", -M).fw("h1", "y:]", k).fw("h2", "y:]", -k)
    b.unit(f"y:{EOS}", "linear", F(7, 10)).fw("h1", f"y:{EOS}", -k).fw("h2", f"y:{EOS}", k)
    return b.build()


BUILDERS = {
    "anbn": build_anbn,
    "anbncn": build_anbncn,
    "dyck1": build_dyck1,
    "dyck2": build_dyck2,
    "arithmetic": build_arithmetic,
    "toy_english": build_toy_english,
    "anbn_diff": build_anbn_diff,
    "anbncn_diff": build_anbncn_diff,
    "dyck1_diff": build_dyck1_diff,
}


def golden_text(name: str) -> str:
    return resources.files("mdlnets").joinpath(f"data/goldens/{name}.net").read_text(encoding="utf-8")


def load_golden(name: str) -> Network:
    """Load a shipped golden network file."""
    if name not in BUILDERS:
        raise KeyError(f"no golden network named {name!r}")
    return Network.from_text(golden_text(name))

"""Text formats for datasets, models, codebooks and experiment configs.

Dataset::

    dims 2
    cards 2 2
    0 1
    1 1

    1 0

Sequences are separated by blank lines; ``#`` starts a comment. The header
may also be written on one line, ``dims 2 cards 2 2``.

Model (floats printed with ``repr`` so they round-trip exactly)::

    pohmmkit-model 1
    dims 2
    cards 2 2
    experts 1
    expert 0 states 2
    init 0.1 -0.3
    trans 0.0 1.5
    trans 0.2 0.0
    emit 0 0.0 1.0
    ...
    end
"""

import json
import os
import tempfile
from dataclasses import asdict, dataclass, fields

import numpy as np

from .data import AlphabetSpec, SequenceDataset
from .errors import InvalidInputError, ParseError, UnsupportedVersionError
from .hmm import Hmm
from .product import ProductHmm
from .quantize import Codebook, GroupSpec

MODEL_MAGIC = "pohmmkit-model"
MODEL_VERSION = 1
CODEBOOK_MAGIC = "pohmmkit-codebook"
CODEBOOK_VERSION = 1


def atomic_write(path, text):
    """Write ``text`` to a temporary file beside ``path`` and rename it into place."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _lines(path):
    with open(path) as f:
        for no, raw in enumerate(f, start=1):
            yield no, raw.split("#", 1)[0].strip()


def _ints(tokens, no, path):
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise ParseError(f"expected integers, got {' '.join(tokens)!r}", no, path)


# -- datasets ---------------------------------------------------------------

def format_dataset(data):
    out = [f"dims {data.alphabet.num_dims}", "cards " + " ".join(map(str, data.alphabet.cardinalities))]
    for i, s in enumerate(data):
        if i:
            out.append("")
        out.extend(" ".join(map(str, row)) for row in s.tolist())
    return "\n".join(out) + "\n"


def save_dataset(path, data):
    atomic_write(path, format_dataset(data))


def load_dataset(path):
    """Parse a dataset file, validating every symbol against the declared alphabet."""
    dims = cards = None
    seqs, cur = [], []
    for no, line in _lines(path):
        if dims is None or cards is None:
            if not line:
                continue
            key, *rest = line.split()
            if key == "dims" and dims is None:
                if "cards" in rest:
                    # one-line header: "dims D cards V_1 .. V_D"
                    at = rest.index("cards")
                    rest, key, card_tokens = rest[:at], "cards", rest[at + 1:]
                vals = _ints(rest, no, path)
                if len(vals) != 1 or vals[0] < 1:
                    raise ParseError("dims needs one positive integer", no, path)
                dims = vals[0]
                if key == "cards":
                    cards = _ints(card_tokens, no, path)
                    if len(cards) != dims or min(cards) < 2:
                        raise ParseError(f"cards needs {dims} integers >= 2", no, path)
            elif key == "cards" and dims is not None:
                cards = _ints(rest, no, path)
                if len(cards) != dims or min(cards) < 2:
                    raise ParseError(f"cards needs {dims} integers >= 2", no, path)
            else:
                raise ParseError("missing 'dims D' / 'cards V_1 .. V_D' header", no, path)
            continue
        if not line:
            if cur:
                seqs.append(cur)
                cur = []
            continue
        row = _ints(line.split(), no, path)
        if len(row) != dims:
            raise ParseError(f"row has {len(row)} symbols, expected {dims}", no, path)
        for d, (y, v) in enumerate(zip(row, cards)):
            if not 0 <= y < v:
                raise ParseError(f"symbol {y} out of range for dimension {d} (V={v})", no, path)
        cur.append(row)
    if dims is None or cards is None:
        raise ParseError("missing 'dims D' / 'cards V_1 .. V_D' header", None, path)
    if cur:
        seqs.append(cur)
    return SequenceDataset(AlphabetSpec(tuple(cards)), [np.array(s, dtype=np.int64) for s in seqs])


def load_rainfall_season(path, days_by_station=False):
    """One season file: a whitespace-separated 0/1 matrix, stations by days."""
    rows = []
    for no, line in _lines(path):
        if not line:
            continue
        vals = _ints(line.split(), no, path)
        if any(v not in (0, 1) for v in vals):
            raise ParseError("rainfall occurrences must be 0 or 1", no, path)
        if rows and len(vals) != len(rows[0]):
            raise ParseError("ragged rainfall matrix", no, path)
        rows.append(vals)
    if not rows:
        raise ParseError("empty rainfall file", None, path)
    m = np.array(rows, dtype=np.int64)
    return m if days_by_station else m.T


def convert_rainfall(paths, days_by_station=False):
    """Stack per-season 0/1 matrices into a binary dataset, one sequence per season."""
    seqs = [load_rainfall_season(p, days_by_station) for p in paths]
    if not seqs:
        raise InvalidInputError("no season files")
    D = seqs[0].shape[1]
    for p, s in zip(paths, seqs):
        if s.shape[1] != D:
            raise ParseError(f"expected {D} stations, got {s.shape[1]}", None, p)
    return SequenceDataset(AlphabetSpec((2,) * D), seqs)


# -- models -----------------------------------------------------------------

def _fl(a):
    return " ".join(repr(float(x)) for x in np.ravel(a))


def format_model(model):
    p = model if isinstance(model, ProductHmm) else ProductHmm([model])
    out = [f"{MODEL_MAGIC} {MODEL_VERSION}", f"dims {p.alphabet.num_dims}",
           "cards " + " ".join(map(str, p.alphabet.cardinalities)), f"experts {len(p)}"]
    for m, e in enumerate(p.experts):
        out.append(f"expert {m} states {e.num_states}")
        out.append("init " + _fl(e.init_logits))
        out.extend("trans " + _fl(row) for row in e.trans_logits)
        for d, em in enumerate(e.emit_logits):
            out.extend(f"emit {d} " + _fl(row) for row in em)
    out.append("end")
    return "\n".join(out) + "\n"


def save_model(path, model):
    atomic_write(path, format_model(model))


class _Reader:
    def __init__(self, path):
        self.path = path
        self.items = [(no, line.split()) for no, line in _lines(path) if line]
        self.i = 0

    def next(self, key):
        if self.i >= len(self.items):
            raise ParseError(f"unexpected end of file, expected {key!r}", None, self.path)
        no, tok = self.items[self.i]
        if tok[0] != key:
            raise ParseError(f"expected {key!r}, got {tok[0]!r}", no, self.path)
        self.i += 1
        return no, tok[1:]

    def floats(self, key, n, prefix=0):
        no, tok = self.next(key)
        tok = tok[prefix:]
        try:
            vals = [float(t) for t in tok]
        except ValueError:
            raise ParseError("malformed number", no, self.path)
        if len(vals) != n:
            raise ParseError(f"expected {n} values, got {len(vals)}", no, self.path)
        return vals


def load_model(path):
    """Read a model file as a :class:`ProductHmm`. No partial model is returned on error."""
    r = _Reader(path)
    no, tok = r.next(MODEL_MAGIC)
    if tok != [str(MODEL_VERSION)]:
        raise UnsupportedVersionError(f"unsupported model format version {' '.join(tok)}", no, path)
    no, tok = r.next("dims")
    D = _ints(tok, no, path)[0]
    no, tok = r.next("cards")
    cards = _ints(tok, no, path)
    if len(cards) != D:
        raise ParseError("cards does not match dims", no, path)
    alphabet = AlphabetSpec(tuple(cards))
    no, tok = r.next("experts")
    M = _ints(tok, no, path)[0]
    experts = []
    for m in range(M):
        no, tok = r.next("expert")
        if len(tok) != 3 or tok[1] != "states":
            raise ParseError("expected 'expert <m> states <S>'", no, path)
        S = _ints(tok[2:], no, path)[0]
        init = r.floats("init", S)
        trans = [r.floats("trans", S) for _ in range(S)]
        emit = [[r.floats("emit", v, prefix=1) for _ in range(S)] for v in cards]
        try:
            experts.append(Hmm(alphabet, init, trans, emit))
        except InvalidInputError as e:
            raise ParseError(str(e), no, path)
    r.next("end")
    return ProductHmm(experts)


def load_hmm(path):
    """Read a model file that holds exactly one expert, as an :class:`Hmm`."""
    p = load_model(path)
    if len(p) != 1:
        raise InvalidInputError(f"{path} holds {len(p)} experts, not a single HMM")
    return p.experts[0]


# -- codebooks --------------------------------------------------------------

def format_codebook(cb):
    out = [f"{CODEBOOK_MAGIC} {CODEBOOK_VERSION}", f"groups {len(cb.spec.groups)}"]
    for g, ((name, cols), c) in enumerate(zip(cb.spec.groups, cb.centroids)):
        out.append(f"group {name} {c.shape[0]} {c.shape[1]}")
        out.append("cols " + " ".join(map(str, cols)))
        if cb.means is not None:
            out.append("mean " + _fl(cb.means[g]))
            out.append("scale " + _fl(cb.scales[g]))
        out.extend("c " + _fl(row) for row in c)
    return "\n".join(out) + "\n"


def save_codebook(path, cb):
    atomic_write(path, format_codebook(cb))


def load_codebook(path):
    r = _Reader(path)
    no, tok = r.next(CODEBOOK_MAGIC)
    if tok != [str(CODEBOOK_VERSION)]:
        raise UnsupportedVersionError(f"unsupported codebook version {' '.join(tok)}", no, path)
    no, tok = r.next("groups")
    G = _ints(tok, no, path)[0]
    groups, cents, means, scales = [], [], [], []
    for _ in range(G):
        no, tok = r.next("group")
        if len(tok) != 3:
            raise ParseError("expected 'group <name> <K> <width>'", no, path)
        name = tok[0]
        K, W = _ints(tok[1:], no, path)
        no, tok = r.next("cols")
        cols = _ints(tok, no, path)
        if len(cols) != W:
            raise ParseError("column count does not match width", no, path)
        if r.i < len(r.items) and r.items[r.i][1][0] == "mean":
            means.append(np.array(r.floats("mean", W)))
            scales.append(np.array(r.floats("scale", W)))
        cents.append(np.array([r.floats("c", W) for _ in range(K)]))
        groups.append((name, cols))
    if means and len(means) != G:
        raise ParseError("standardization given for only some groups", None, path)
    return Codebook(GroupSpec(tuple(groups)), cents, means or None, scales or None)


def load_frames(path):
    """Continuous frames: ``.npy`` or whitespace-separated text, one frame per row."""
    path = os.fspath(path)
    if path.endswith(".npy"):
        return np.load(path)
    return np.loadtxt(path, ndmin=2)


# -- experiment config -------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Settings for one cross-validated experiment; see ``load_config`` for the file syntax."""

    data: str = ""
    output: str = "out"
    model: str = "pohmm"
    experts: int = 2
    states: int = 3
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 1000
    cd_k: str = "1"
    init_spread: float = 0.5
    em_max_iters: int = 200
    em_tol: float = 1e-6
    em_restarts: int = 1
    smoothing: float = 1.0
    ais_runs: int = 100
    ais_steps: int = 500
    cv_k: int = 6
    repetitions: int = 1
    num_sims: int = 500
    sim_T: int = 90
    burn_in: int = 100
    imputation_positions: int = 0
    seed: int = 0

    def validate(self):
        if self.model not in ("hmm", "pohmm"):
            raise InvalidInputError("model must be 'hmm' or 'pohmm'")
        positive = ["experts", "states", "epochs", "em_max_iters", "em_restarts", "ais_steps",
                    "cv_k", "repetitions", "num_sims", "sim_T", "burn_in"]
        for name in positive:
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be positive")
        if self.ais_runs < 2:
            raise InvalidInputError("ais_runs must be at least 2")
        if not self.learning_rate >= 0 or not 0 <= self.momentum < 1:
            raise InvalidInputError("learning_rate must be >= 0 and momentum in [0, 1)")
        if not self.smoothing > 0 or not self.em_tol >= 0 or not self.init_spread >= 0:
            raise InvalidInputError("smoothing must be > 0, em_tol and init_spread >= 0")
        if self.imputation_positions < 0:
            raise InvalidInputError("imputation_positions must be >= 0 (0 scores all)")
        parse_cd_k(self.cd_k)
        return self

    def to_dict(self):
        return asdict(self)


def parse_cd_k(text):
    """``"10"`` -> 10; ``"0:1,200:5"`` -> ``[(0, 1), (200, 5)]``."""
    text = str(text).strip()
    try:
        if ":" not in text:
            k = int(text)
            if k < 1:
                raise ValueError
            return k
        steps = []
        for part in text.split(","):
            e, k = part.split(":")
            steps.append((int(e), int(k)))
        if steps[0][0] != 0 or any(k < 1 for _, k in steps):
            raise ValueError
        return steps
    except ValueError:
        raise InvalidInputError(f"bad cd_k value {text!r}")


def load_config(path, **overrides):
    """Parse flat ``key = value`` lines; unknown keys are errors."""
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    vals = {}
    for no, line in _lines(path):
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ParseError("expected 'key = value'", no, path)
        if key not in types:
            raise ParseError(f"unknown config key {key!r}", no, path)
        try:
            vals[key] = _convert(types[key], value)
        except ValueError:
            raise ParseError(f"bad value for {key}: {value!r}", no, path)
    vals.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**vals).validate()


def _convert(typ, value):
    if typ in (int, "int"):
        return int(value)
    if typ in (float, "float"):
        return float(value)
    return value


def format_config(cfg):
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())


def write_manifest(path, payload):
    atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")

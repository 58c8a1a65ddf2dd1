"""Per-path scoreboard and path choice: power-of-two on RTT or ECN, oblivious spray."""
from __future__ import annotations

EWMA_ALPHA = 1.0 / 8


class PathScoreboard:
    def __init__(self, paths, base_rtt_ns: float, alpha: float = EWMA_ALPHA):
        self.paths = list(paths)
        self._pos = {p: i for i, p in enumerate(self.paths)}
        n = len(self.paths)
        self.alpha = alpha
        self.rtt = [float(base_rtt_ns)] * n
        self.ecn = [0.0] * n
        self.last_used = [0] * n
        self.outstanding = [0] * n
        self.samples = [0] * n

    def index(self, path_id: int) -> int:
        try:
            return self._pos[path_id]
        except KeyError:
            raise ValueError(f"path {path_id} not on this scoreboard") from None

    def rtt_of(self, path_id):
        return self.rtt[self.index(path_id)]

    def ecn_of(self, path_id):
        return self.ecn[self.index(path_id)]

    def on_send(self, path_id, nbytes, now):
        i = self._pos[path_id]
        self.outstanding[i] += nbytes
        self.last_used[i] = now


def record_sample(board: PathScoreboard, path_id: int, rtt: float, ecn_flag: bool, acked_bytes: int = 0) -> None:
    if rtt <= 0:
        raise ValueError("rtt must be positive")
    i = board.index(path_id)
    a = board.alpha
    board.rtt[i] += a * (rtt - board.rtt[i])
    board.ecn[i] += a * ((1.0 if ecn_flag else 0.0) - board.ecn[i])
    board.samples[i] += 1
    if acked_bytes:
        board.outstanding[i] = max(0, board.outstanding[i] - acked_bytes)


def _two(rng, path_set):
    if not path_set:
        raise ValueError("empty path set")
    n = len(path_set)
    if n == 1:
        return path_set[0], path_set[0]
    i = int(rng.random() * n)
    j = int(rng.random() * (n - 1))
    if j >= i:
        j += 1
    return path_set[i], path_set[j]


def _better(a, b, va, vb):
    if va < vb or (va == vb and a < b):
        return a
    return b


def choose_path_p2(board: PathScoreboard, rng, path_set) -> int:
    """Two distinct uniform draws; keep the lower RTT EWMA (ties to lower id)."""
    a, b = _two(rng, path_set)
    if a == b:
        return a
    r = board.rtt
    pos = board._pos
    return _better(a, b, r[pos[a]], r[pos[b]])


def choose_path_ecn(board: PathScoreboard, rng, path_set) -> int:
    a, b = _two(rng, path_set)
    if a == b:
        return a
    e = board.ecn
    pos = board._pos
    return _better(a, b, e[pos[a]], e[pos[b]])


def choose_path_oblivious(rng, path_set) -> int:
    if not path_set:
        raise ValueError("empty path set")
    return path_set[int(rng.random() * len(path_set))]


POLICIES = ("rtt", "ecn", "oblivious")


def choose_path(name: str, board: PathScoreboard, rng, path_set) -> int:
    if name == "rtt":
        return choose_path_p2(board, rng, path_set)
    if name == "ecn":
        return choose_path_ecn(board, rng, path_set)
    if name == "oblivious":
        return choose_path_oblivious(rng, path_set)
    raise ValueError(f"unknown lb policy {name!r}")

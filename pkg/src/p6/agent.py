"""Double DQN with a numpy MLP, linear epsilon decay and rank-prioritized replay."""

from dataclasses import dataclass, field

import numpy as np


class DimensionMismatch(ValueError):
    pass


@dataclass
class MlpModel:
    weights: list  # W[i] has shape (fan_in, fan_out)
    biases: list

    @classmethod
    def init(cls, sizes, rng):
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            lim = 1.0 / np.sqrt(fan_in)
            ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
            bs.append(rng.uniform(-lim, lim, size=fan_out))
        return cls(ws, bs)

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self):
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def params(self):
        return self.weights + self.biases

    def equals(self, other):
        return all(np.array_equal(a, b) for a, b in zip(self.params(), other.params()))


def _extent(x):
    """One past the last input column holding a nonzero value."""
    nz = np.flatnonzero(x.reshape(-1, x.shape[-1]).any(axis=0))
    return int(nz[-1]) + 1 if len(nz) else 0


def _narrow(x):
    return x[..., :_extent(x)]


def _activations(m, x):
    """Layer outputs; hidden layers use ReLU, the output layer is linear.

    ``x`` may be narrower than the input layer: missing trailing columns are
    zero (packet states are zero past the packet end), so the first layer
    only multiplies the given prefix.
    """
    k = x.shape[-1]
    acts = [x]
    n = len(m.weights)
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        z = (x @ w[:k] + b) if i == 0 else (acts[-1] @ w + b)
        acts.append(np.maximum(z, 0.0) if i < n - 1 else z)
    return acts


def forward(m, s):
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != m.weights[0].shape[0]:
        raise DimensionMismatch(f"input has {s.shape[-1]} features, model expects {m.weights[0].shape[0]}")
    return _activations(m, _narrow(s))[-1]


def pack_states(packets, width):
    """Packets as a batch of octet/255 rows, only as wide as the longest packet."""
    rows = [np.frombuffer(bytes(p)[:width], dtype=np.uint8) for p in packets]
    x = np.zeros((len(rows), max((len(r) for r in rows), default=0)))
    for i, r in enumerate(rows):
        x[i, :len(r)] = r
    return x / 255.0


def _batch(items, encode):
    """``encode`` maps a list of stored states to a 2-D array; by default they are stacked."""
    x = encode(items) if encode else np.stack(items)
    return _narrow(x)


@dataclass(frozen=True)
class Transition:
    """``s`` and ``s_next`` are kept as packet bytes and encoded on demand."""

    s: object
    a: int
    r: float
    s_next: object
    terminal: bool


@dataclass
class Hyperparams:
    gamma: float = 0.9
    eps_start: float = 1.0
    eps_min: float = 0.05
    eps_decay_fraction: float = 0.5  # share of all steps over which epsilon falls to eps_min
    lr: float = 1e-3
    batch_size: int = 32
    target_sync_every: int = 100
    replay_capacity: int = 4096
    priority_factor: float = 0.9
    num_episodes: int = 100
    max_ep_len: int = 32
    hidden: tuple = (64, 64)
    loss: str = "mse"  # or "cross_entropy"

    @property
    def total_steps(self):
        return self.num_episodes * self.max_ep_len

    @property
    def eps_decay_per_step(self):
        span = self.eps_decay_fraction * self.total_steps
        return (self.eps_start - self.eps_min) / span if span > 0 else self.eps_start

    def epsilon(self, step):
        return max(self.eps_min, self.eps_start - step * self.eps_decay_per_step)


class ReplayMemory:
    """Bounded FIFO memory sampled by rank of |reward|.

    Distinct |r| values are ranked in descending order (equal rewards share a
    rank); an entry whose |r| has rank k is drawn with weight
    ``priority_factor ** k``.
    """

    def __init__(self, capacity=4096, priority_factor=0.9):
        if not 0 < priority_factor <= 1:
            raise ValueError("priority_factor must be in (0, 1]")
        self.capacity = capacity
        self.priority_factor = priority_factor
        self.entries = []
        self._absr = []

    def __len__(self):
        return len(self.entries)

    def add(self, t):
        self.entries.append(t)
        self._absr.append(abs(t.r))
        if len(self.entries) > self.capacity:
            self.entries.pop(0)
            self._absr.pop(0)

    def ranks(self):
        r = np.asarray(self._absr, dtype=np.float64)
        levels = np.unique(r)[::-1]
        return np.searchsorted(-levels, -r)

    def probabilities(self):
        """Sampling probability per entry, in storage order."""
        w = self.priority_factor ** self.ranks().astype(np.float64)
        return w / w.sum()

    def sample(self, n, rng):
        idx = rng.choice(len(self.entries), size=n, replace=True, p=self.probabilities())
        return [self.entries[i] for i in idx]


def ddqn_target(t, online, target, gamma, encode=None):
    """y = r for terminal transitions, else r + gamma * Q_target(s', argmax_a Q_online(s', a))."""
    if t.terminal:
        return float(t.r)
    s2 = _batch([t.s_next], encode)
    a_star = int(np.argmax(_activations(online, s2)[-1][0]))
    return float(t.r + gamma * _activations(target, s2)[-1][0, a_star])


def _targets(batch, online, target, gamma, encode):
    r = np.array([t.r for t in batch], dtype=np.float64)
    term = np.array([t.terminal for t in batch])
    s2 = _batch([t.s_next for t in batch], encode)
    a_star = np.argmax(_activations(online, s2)[-1], axis=1)
    q_t = _activations(target, s2)[-1][np.arange(len(batch)), a_star]
    return np.where(term, r, r + gamma * q_t)


def loss_and_grads(m, x, actions, y, loss="mse"):
    """Loss over a batch and its gradients w.r.t. every weight and bias."""
    x = _narrow(np.asarray(x, dtype=np.float64))
    acts = _activations(m, x)
    q = acts[-1]
    n = len(actions)
    rows = np.arange(n)
    dq = np.zeros_like(q)
    if loss == "mse":
        diff = q[rows, actions] - y
        value = float(np.mean(diff ** 2))
        dq[rows, actions] = 2.0 * diff / n
    elif loss == "cross_entropy":
        z = q - q.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        value = float(-np.mean(y * logp[rows, actions]))
        soft = np.exp(logp)
        onehot = np.zeros_like(q)
        onehot[rows, actions] = 1.0
        dq = (y[:, None] * (soft - onehot)) / n
    else:
        raise ValueError(f"unknown loss {loss}")
    gw = [None] * len(m.weights)
    gb = [None] * len(m.biases)
    delta = dq
    for i in range(len(m.weights) - 1, -1, -1):
        if i == 0:
            gw[0] = np.zeros_like(m.weights[0])
            gw[0][:x.shape[1]] = x.T @ delta
        else:
            gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ m.weights[i].T) * (acts[i] > 0)
    return value, gw, gb


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    rows: list = field(default_factory=list)  # per matrix: rows that ever had a gradient

    def update(self, params, grads):
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
            self.rows = [0] * len(params)
        self.t += 1
        # bias corrections folded into the step size
        step = self.lr * np.sqrt(1 - self.beta2 ** self.t) / (1 - self.beta1 ** self.t)
        eps = self.eps * np.sqrt(1 - self.beta2 ** self.t)
        for j, (p, g, m, v) in enumerate(zip(params, grads, self.m, self.v)):
            # rows whose gradient has always been zero keep zero moments and
            # would not move, so they are skipped
            if p.ndim == 2:
                nz = np.flatnonzero(g.any(axis=1))
                if len(nz):
                    self.rows[j] = max(self.rows[j], int(nz[-1]) + 1)
                k = self.rows[j]
                p, g, m, v = p[:k], g[:k], m[:k], v[:k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            denom = np.sqrt(v)
            denom += eps
            p -= step * (m / denom)


def train_step(online, target, batch, hp, opt=None, encode=None):
    """One gradient step on ``online`` (in place); returns the batch loss."""
    if not batch:
        raise ValueError("empty batch")
    y = _targets(batch, online, target, hp.gamma, encode)
    x = _batch([t.s for t in batch], encode)
    actions = np.array([t.a for t in batch])
    loss, gw, gb = loss_and_grads(online, x, actions, y, hp.loss)
    opt = opt if opt is not None else Adam(hp.lr)
    opt.update(online.params(), gw + gb)
    return loss


def select_action(online, s, epsilon, rng):
    """Epsilon-greedy; ``np.argmax`` breaks ties towards the lowest index."""
    n = online.weights[-1].shape[1]
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(n))
    return int(np.argmax(forward(online, s)))


@dataclass
class TrainedAgent:
    online: MlpModel
    target: MlpModel
    episode_rewards: list
    steps: int = 0


def train_agent(env, hp, seed):
    """Algorithm: DDQN over ``hp.num_episodes`` episodes of at most ``hp.max_ep_len`` steps."""
    rng = np.random.default_rng(seed)
    sizes = [env.state_len, *hp.hidden, env.num_actions]
    online = MlpModel.init(sizes, rng)
    target = online.copy()
    memory = ReplayMemory(hp.replay_capacity, hp.priority_factor)
    opt = Adam(hp.lr)
    encode = lambda packets: pack_states(packets, env.state_len)
    env.max_ep_len = hp.max_ep_len
    rewards = []
    step = 0
    for _ in range(hp.num_episodes):
        s = env.reset()
        p = env.packet
        total = 0
        for _ in range(hp.max_ep_len):
            a = select_action(online, s, hp.epsilon(step), rng)
            s2, r, terminal, _ = env.step(a)
            memory.add(Transition(p, a, r, env.packet, terminal))
            if len(memory) >= hp.batch_size:
                train_step(online, target, memory.sample(hp.batch_size, rng), hp, opt, encode)
            step += 1
            if step % hp.target_sync_every == 0:
                target = online.copy()
            total += r
            s, p = s2, env.packet
            if terminal:
                break
        rewards.append(total)
    return TrainedAgent(online, target, rewards, step)


# ---------------------------------------------------------------- persistence

_MAGIC = "P6MLP"
_VERSION = 1


def save_model(m, path):
    header = f"{_MAGIC} {_VERSION} {','.join(map(str, m.sizes))}\n".encode()
    with open(path, "wb") as f:
        f.write(header)
        for w, b in zip(m.weights, m.biases):
            f.write(w.astype("<f8").tobytes())
            f.write(b.astype("<f8").tobytes())


def load_model(path):
    with open(path, "rb") as f:
        header = f.readline().decode().split()
        if len(header) != 3 or header[0] != _MAGIC:
            raise ValueError(f"{path}: not a model file")
        if int(header[1]) != _VERSION:
            raise ValueError(f"{path}: unsupported model version {header[1]}")
        sizes = [int(x) for x in header[2].split(",")]
        data = np.frombuffer(f.read(), dtype="<f8")
    ws, bs, pos = [], [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        ws.append(data[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out).copy())
        pos += fan_in * fan_out
        bs.append(data[pos:pos + fan_out].copy())
        pos += fan_out
    if pos != len(data):
        raise ValueError(f"{path}: size mismatch")
    return MlpModel(ws, bs)

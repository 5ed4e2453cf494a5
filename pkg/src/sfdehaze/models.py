"""Source dehazing network, the DRN adapter and the teacher/student assembly."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .checkpoint import Checkpoint, CheckpointError
from .nn import Conv2d, Module
from .tensor import ShapeError, Tensor

SOURCE_ARCH = "sourcenet-v1"
STUDENT_ARCH = "student-v1"
TAP_NAMES = ("enc1", "enc2", "body")
TAP_CHANNELS = {"enc1": 16, "enc2": 32, "body": 32}


class ResBlock(Module):
    def __init__(self, ch: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(ch, ch, 3, rng=rng)
        self.conv2 = Conv2d(ch, ch, 3, rng=rng)
        # keep the block near identity at init
        self.conv2.weight.data *= 0.1

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class SourceNet(Module):
    """Compact encoder/body/decoder dehazer with a global residual connection.

    Encoder: two stride-2 3x3 convs (3->16->32). Body: three residual blocks at
    32 channels. Decoder: bilinear x2 upsampling + conv (32->16, then 16->3).
    The final conv starts at zero, so an untrained net returns its input.
    """

    def __init__(self, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.enc1 = Conv2d(3, 16, 3, stride=2, rng=rng)
        self.enc2 = Conv2d(16, 32, 3, stride=2, rng=rng)
        self.res1 = ResBlock(32, rng)
        self.res2 = ResBlock(32, rng)
        self.res3 = ResBlock(32, rng)
        self.dec1 = Conv2d(32, 16, 3, rng=rng)
        self.dec2 = Conv2d(16, 3, 3, zero_init=True)
        for name, p in self.named_parameters():
            p.name = name

    def forward(self, x, adapters=None):
        """Return ``(output, taps)``; ``adapters`` maps tap names to callables applied in place."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected N x 3 x H x W input, got {x.shape}")
        H, W = x.shape[2:]
        if H % 4 or W % 4:
            raise ShapeError(f"spatial size {H}x{W} must be a multiple of 4; pad the image first")
        adapters = adapters or {}
        taps = {}

        def tap(name, h):
            if name in adapters:
                h = adapters[name](h)
            taps[name] = h
            return h

        h = tap("enc1", F.relu(self.enc1(x)))
        h = tap("enc2", F.relu(self.enc2(h)))
        h = self.res3(self.res2(self.res1(h)))
        h = tap("body", h)
        h = F.relu(self.dec1(F.upsample2x(h)))
        out = x + self.dec2(F.upsample2x(h))
        return out, taps


class DrnModule(Module):
    """Domain representation normalization.

    The input X is split into a domain-invariant part F = IN(X) and a residual
    Res = X - F. Per-channel mean and std are broadcast to planes and fused with
    Res by a 3x3 conv into the domain-variant part DV; the output is F + DV.
    """

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.fusion = Conv2d(3 * channels, channels, 3, zero_init=True)
        # identity on the Res planes, zero on the statistic planes
        idx = np.arange(channels)
        self.fusion.weight.data[idx, idx, 1, 1] = 1.0

    def forward(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"DRN expects {self.channels} channels, got input shape {x.shape}")
        N, C = x.shape[:2]
        inv, mu, std = F.instance_norm(x, self.eps)
        res = x - inv
        mu_plane = F.broadcast_to(F.reshape(mu, (N, C, 1, 1)), x.shape)
        std_plane = F.broadcast_to(F.reshape(std, (N, C, 1, 1)), x.shape)
        dv = self.fusion(F.concat([res, mu_plane, std_plane], axis=1))
        # F + DV written as X + (DV - Res): same function, but exact when DV == Res
        return x + (dv - res)


class StudentNet(Module):
    """Frozen source network with DRN modules inserted at named taps."""

    def __init__(self, source: SourceNet, insertion_points=TAP_NAMES, eps: float = 1e-5):
        super().__init__()
        self.source = source
        self.insertion_points = tuple(insertion_points)
        self.drn = Module()
        for name in self.insertion_points:
            if name not in TAP_CHANNELS:
                raise ValueError(f"unknown insertion point {name!r}; choose from {TAP_NAMES}")
            self.drn.register_module(name, DrnModule(TAP_CHANNELS[name], eps))
        source.freeze()
        for name, p in self.named_parameters():
            p.name = name

    def forward(self, x):
        adapters = {name: getattr(self.drn, name) for name in self.insertion_points}
        return self.source.forward(x, adapters=adapters)

    def drn_parameters(self) -> list[Tensor]:
        return self.drn.parameters()


# ---------------------------------------------------------------------------
# checkpoint glue

def source_checkpoint(net: SourceNet, **metadata) -> Checkpoint:
    return Checkpoint(SOURCE_ARCH, dict(metadata), {n: p.data.copy() for n, p in net.named_parameters()})


def student_checkpoint(student: StudentNet, **metadata) -> Checkpoint:
    meta = dict(metadata)
    meta["insertion_points"] = list(student.insertion_points)
    return Checkpoint(STUDENT_ARCH, meta, {n: p.data.copy() for n, p in student.named_parameters()})


def source_from_checkpoint(ckpt: Checkpoint) -> SourceNet:
    if ckpt.arch != SOURCE_ARCH:
        raise CheckpointError(f"expected architecture {SOURCE_ARCH!r}, checkpoint holds {ckpt.arch!r}")
    net = SourceNet()
    ckpt.load_into(net)
    return net


def assemble_student(source: Checkpoint, insertion_points=TAP_NAMES) -> StudentNet:
    """Build a student around a frozen copy of the source checkpoint, DRNs at identity."""
    return StudentNet(source_from_checkpoint(source), insertion_points)


def student_from_checkpoint(ckpt: Checkpoint) -> StudentNet:
    if ckpt.arch != STUDENT_ARCH:
        raise CheckpointError(f"expected architecture {STUDENT_ARCH!r}, checkpoint holds {ckpt.arch!r}")
    student = StudentNet(SourceNet(), ckpt.metadata.get("insertion_points", TAP_NAMES))
    ckpt.load_into(student)
    return student


def net_from_checkpoint(ckpt: Checkpoint):
    """Source or student network, whichever the checkpoint describes."""
    if ckpt.arch == STUDENT_ARCH:
        return student_from_checkpoint(ckpt)
    return source_from_checkpoint(ckpt)

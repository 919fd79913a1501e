"""Parser and renderer for compact alphanumeric architecture strings.

Grammar (tokens joined with ``-``):

* ``<r>x<f>C<k>``   r consecutive conv layers, f maps, k x k kernels
* ``<f>C<k>``       one conv layer
* ``<i>x<f>(C<k>)`` one conv layer; the ``<i>x`` prefix documents the
  incoming map count and is cross-checked against the actual stack
* ``<f>(C<k>)``     one conv layer, parenthesized style
* ``MP<s>``         overlapped max pooling, window 3, stride s
* ``<n>FC``         fully connected layer of n units
* ``<n>Softmax``    classifier over n classes
* bare ``<n>``      FC units, or classifier classes when final

Examples: ``2x128C3-MP2-2x128C3-MP2-2x256C3-256FC-10Softmax`` and
``1x6(C5)-6x16(C5)-16x120(C5)-84-10``. The unicode multiplication sign is
accepted in place of ``x``. Every conv layer implicitly carries batch
normalization and a ReLU.
"""

import re
from dataclasses import dataclass

from .errors import ArchitectureError

POOL_WINDOW = 3  # MP<s> always denotes a 3x3 window; the suffix is the stride


@dataclass(frozen=True)
class Conv:
    maps: int
    k: int


@dataclass(frozen=True)
class MaxPool:
    stride: int
    window: int = POOL_WINDOW


@dataclass(frozen=True)
class FC:
    units: int


@dataclass(frozen=True)
class Softmax:
    classes: int


@dataclass(frozen=True)
class NetworkSpec:
    """Validated layer sequence plus the input geometry it was checked against."""

    input_shape: tuple  # (maps, H, W)
    layers: tuple

    def conv_layers(self):
        return [l for l in self.layers if isinstance(l, Conv)]

    @property
    def classes(self):
        return self.layers[-1].classes


_CONV_RUN = re.compile(r"^(\d+)x(\d+)C(\d+)$")
_CONV_ONE = re.compile(r"^(\d+)C(\d+)$")
_CONV_PAREN = re.compile(r"^(?:(\d+)x)?(\d+)\(C(\d+)\)$")
_POOL = re.compile(r"^MP(\d+)$")
_FC = re.compile(r"^(\d+)FC$")
_SOFTMAX = re.compile(r"^(\d+)Softmax$")
_BARE = re.compile(r"^(\d+)$")


def _conv_pad(k, pad_mode):
    if pad_mode == "same":
        return k // 2
    if pad_mode == "valid":
        return 0
    raise ArchitectureError(f"unknown pad mode {pad_mode!r}")


def spec_geometry(spec, pad_mode="same"):
    """Spatial size after each layer; raises when any extent drops below 1."""
    maps, h, w = spec.input_shape
    sizes = []
    for pos, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            p = _conv_pad(layer.k, pad_mode)
            h2 = (h + 2 * p - layer.k) + 1
            w2 = (w + 2 * p - layer.k) + 1
            if h2 < 1 or w2 < 1:
                raise ArchitectureError(
                    f"layer {pos}: conv k={layer.k} underflows {h}x{w} spatial extent"
                )
            h, w, maps = h2, w2, layer.maps
        elif isinstance(layer, MaxPool):
            if h < layer.window or w < layer.window:
                raise ArchitectureError(
                    f"layer {pos}: pooling window {layer.window} underflows {h}x{w}"
                )
            h = (h - layer.window) // layer.stride + 1
            w = (w - layer.window) // layer.stride + 1
        sizes.append((maps, h, w))
    return sizes


def parse_architecture(text, input_shape, pad_mode="same"):
    """Parse an architecture string into a validated :class:`NetworkSpec`.

    Parsing is total: every token is consumed or an
    :class:`ArchitectureError` is raised carrying the token index and the
    offending substring.
    """
    tokens = text.replace("×", "x").split("-")
    layers = []
    maps = input_shape[0]
    for pos, tok in enumerate(tokens):
        final = pos == len(tokens) - 1
        if not tok:
            raise ArchitectureError("empty token", pos, tok)
        m = _CONV_RUN.match(tok)
        if m:
            reps, f, k = (int(g) for g in m.groups())
            if reps < 1:
                raise ArchitectureError("conv repeat count must be >= 1", pos, tok)
            for _ in range(reps):
                layers.append(Conv(maps=f, k=k))
                maps = f
            continue
        m = _CONV_PAREN.match(tok)
        if m:
            prefix, f, k = m.groups()
            if prefix is not None and int(prefix) != maps:
                raise ArchitectureError(
                    f"incoming-map prefix {prefix} does not match actual {maps} maps",
                    pos,
                    tok,
                )
            layers.append(Conv(maps=int(f), k=int(k)))
            maps = int(f)
            continue
        m = _CONV_ONE.match(tok)
        if m:
            f, k = (int(g) for g in m.groups())
            layers.append(Conv(maps=f, k=k))
            maps = f
            continue
        m = _POOL.match(tok)
        if m:
            layers.append(MaxPool(stride=int(m.group(1))))
            continue
        m = _FC.match(tok)
        if m:
            layers.append(FC(units=int(m.group(1))))
            continue
        m = _SOFTMAX.match(tok)
        if m:
            layers.append(Softmax(classes=int(m.group(1))))
            continue
        m = _BARE.match(tok)
        if m:
            n = int(m.group(1))
            layers.append(Softmax(classes=n) if final else FC(units=n))
            continue
        raise ArchitectureError("unknown token", pos, tok)

    spec = NetworkSpec(input_shape=tuple(input_shape), layers=tuple(layers))
    _validate(spec, pad_mode)
    return spec


def _validate(spec, pad_mode):
    layers = spec.layers
    if not layers or not isinstance(layers[-1], Softmax):
        raise ArchitectureError("architecture must end in a Softmax classifier")
    if sum(isinstance(l, Softmax) for l in layers) != 1:
        raise ArchitectureError("exactly one Softmax layer allowed, at the end")
    if not any(isinstance(l, Conv) for l in layers):
        raise ArchitectureError("architecture needs at least one conv layer")
    seen_fc = False
    for pos, layer in enumerate(layers):
        if isinstance(layer, (FC, Softmax)):
            seen_fc = True
        elif seen_fc:
            raise ArchitectureError(
                f"layer {pos}: conv/pool layers cannot follow FC layers"
            )
    if len(spec.input_shape) != 3 or any(d < 1 for d in spec.input_shape):
        raise ArchitectureError(f"bad input shape {spec.input_shape}")
    spec_geometry(spec, pad_mode)


def render_architecture(spec):
    """Canonical string form; ``parse(render(spec)) == spec``.

    Runs of identical conv layers merge into ``<r>x<f>C<k>`` tokens.
    """
    tokens = []
    i = 0
    layers = spec.layers
    while i < len(layers):
        layer = layers[i]
        if isinstance(layer, Conv):
            run = 1
            while i + run < len(layers) and layers[i + run] == layer:
                run += 1
            tok = f"{layer.maps}C{layer.k}"
            tokens.append(f"{run}x{tok}" if run > 1 else tok)
            i += run
        elif isinstance(layer, MaxPool):
            tokens.append(f"MP{layer.stride}")
            i += 1
        elif isinstance(layer, FC):
            tokens.append(f"{layer.units}FC")
            i += 1
        else:
            tokens.append(f"{layer.classes}Softmax")
            i += 1
    return "-".join(tokens)

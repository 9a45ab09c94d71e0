"""Feature-tokenizer transformer for mixed tabular input, written on numpy.

The network is small by design (embedding dim 4, two pre-norm encoder layers
with two attention heads each, sigmoid head on a [CLS] token) so that the
serialized bundle stays within the 128 KiB budget and single-example inference
runs in well under a millisecond. All math is float64; serialization quantizes
to float32 (see docs/format.md for the byte layout).

Both the forward pass and the analytic backward pass live here so they can be
reviewed side by side; gradient correctness is enforced against central finite
differences in the test suite.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from labelqc.data import FeatureVector, LabelType, WAY_TYPE_VOCAB
from labelqc.errors import DataError, NumericError

EMBED_DIM = 4
N_LAYERS = 2
N_HEADS = 2
DROPOUT_ATTN = 0.2
DROPOUT_FFN = 0.2
LN_EPS = 1e-5
LOSS_EPS = 1e-12
MAX_BUNDLE_BYTES = 128 * 1024

_BUNDLE_MAGIC = b"LQFT"
_BUNDLE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class FeatureDescriptor:
    name: str
    kind: str  # "numerical" | "categorical"
    cardinality: int = 0  # categorical only


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature descriptors; token t+1 corresponds to feature t."""

    features: tuple[FeatureDescriptor, ...]
    embedding_dim: int = EMBED_DIM

    @property
    def numerical(self) -> tuple[FeatureDescriptor, ...]:
        return tuple(f for f in self.features if f.kind == "numerical")

    @property
    def categorical(self) -> tuple[FeatureDescriptor, ...]:
        return tuple(f for f in self.features if f.kind == "categorical")

    @property
    def n_tokens(self) -> int:
        return len(self.features) + 1  # [CLS] is token 0

    def feature_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def to_dict(self) -> dict:
        return {
            "embedding_dim": self.embedding_dim,
            "features": [
                {"name": f.name, "kind": f.kind, "cardinality": f.cardinality}
                for f in self.features
            ],
        }

    @staticmethod
    def from_dict(raw: dict) -> "FeatureSchema":
        return FeatureSchema(
            features=tuple(
                FeatureDescriptor(f["name"], f["kind"], f.get("cardinality", 0))
                for f in raw["features"]
            ),
            embedding_dim=raw.get("embedding_dim", EMBED_DIM),
        )


def default_schema() -> FeatureSchema:
    """Numericals first (order matters: norm_stats index by position)."""
    return FeatureSchema(
        features=(
            FeatureDescriptor("severity_value", "numerical"),
            FeatureDescriptor("zoom", "numerical"),
            FeatureDescriptor("distance_i", "numerical"),
            FeatureDescriptor("distance_r", "numerical"),
            FeatureDescriptor("label_type", "categorical", len(LabelType)),
            FeatureDescriptor("way_type", "categorical", len(WAY_TYPE_VOCAB)),
            FeatureDescriptor("clustered", "categorical", 2),
            FeatureDescriptor("has_tag", "categorical", 2),
            FeatureDescriptor("has_description", "categorical", 2),
            FeatureDescriptor("has_severity", "categorical", 2),
        )
    )


@dataclass
class ModelBundle:
    """Schema + weights + normalization stats; everything inference needs."""

    schema: FeatureSchema
    params: dict[str, np.ndarray]
    norm_mean: np.ndarray  # per numerical feature, from pretraining data
    norm_std: np.ndarray
    version: str = "untrained"
    n_layers: int = N_LAYERS
    n_heads: int = N_HEADS
    dropout_attn: float = DROPOUT_ATTN
    dropout_ffn: float = DROPOUT_FFN

    def copy(self) -> "ModelBundle":
        return ModelBundle(
            schema=self.schema,
            params={k: v.copy() for k, v in self.params.items()},
            norm_mean=self.norm_mean.copy(),
            norm_std=self.norm_std.copy(),
            version=self.version,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            dropout_attn=self.dropout_attn,
            dropout_ffn=self.dropout_ffn,
        )

    # -- serialization ------------------------------------------------------

    def save_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(_BUNDLE_MAGIC)
        header = {
            "schema": self.schema.to_dict(),
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "dropout_attn": self.dropout_attn,
            "dropout_ffn": self.dropout_ffn,
        }
        vbytes = self.version.encode("utf-8")
        hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
        buf.write(struct.pack("<IH", _BUNDLE_FORMAT_VERSION, len(vbytes)))
        buf.write(vbytes)
        buf.write(struct.pack("<I", len(hbytes)))
        buf.write(hbytes)
        blocks = list(self.params.items()) + [
            ("norm_mean", self.norm_mean),
            ("norm_std", self.norm_std),
        ]
        buf.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks:
            nb = name.encode("utf-8")
            arr32 = np.ascontiguousarray(arr, dtype="<f4")
            buf.write(struct.pack("<H", len(nb)))
            buf.write(nb)
            buf.write(struct.pack("<B", arr32.ndim))
            for dim in arr32.shape:
                buf.write(struct.pack("<I", dim))
            buf.write(arr32.tobytes())
        out = buf.getvalue()
        if len(out) > MAX_BUNDLE_BYTES:
            raise DataError(f"bundle is {len(out)} bytes, over the {MAX_BUNDLE_BYTES} budget")
        return out

    def save(self, path: str | Path) -> int:
        data = self.save_bytes()
        Path(path).write_bytes(data)
        return len(data)

    @staticmethod
    def load_bytes(data: bytes) -> "ModelBundle":
        buf = io.BytesIO(data)
        if buf.read(4) != _BUNDLE_MAGIC:
            raise DataError("not a model bundle (bad magic)")
        fmt, vlen = struct.unpack("<IH", buf.read(6))
        if fmt != _BUNDLE_FORMAT_VERSION:
            raise DataError(f"unsupported bundle format version {fmt}")
        version = buf.read(vlen).decode("utf-8")
        (hlen,) = struct.unpack("<I", buf.read(4))
        header = json.loads(buf.read(hlen).decode("utf-8"))
        (nblocks,) = struct.unpack("<I", buf.read(4))
        blocks: dict[str, np.ndarray] = {}
        for _ in range(nblocks):
            (nlen,) = struct.unpack("<H", buf.read(2))
            name = buf.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", buf.read(1))
            shape = tuple(struct.unpack("<I", buf.read(4))[0] for _ in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(buf.read(4 * count), dtype="<f4").reshape(shape)
            blocks[name] = arr.astype(np.float64)
        norm_mean = blocks.pop("norm_mean")
        norm_std = blocks.pop("norm_std")
        return ModelBundle(
            schema=FeatureSchema.from_dict(header["schema"]),
            params=blocks,
            norm_mean=norm_mean,
            norm_std=norm_std,
            version=version,
            n_layers=header["n_layers"],
            n_heads=header["n_heads"],
            dropout_attn=header["dropout_attn"],
            dropout_ffn=header["dropout_ffn"],
        )

    @staticmethod
    def load(path: str | Path) -> "ModelBundle":
        return ModelBundle.load_bytes(Path(path).read_bytes())


def init_bundle(schema: Optional[FeatureSchema] = None, seed: int = 0, version: str = "init") -> ModelBundle:
    """Fresh bundle with deterministic random weights."""
    schema = schema or default_schema()
    d = schema.embedding_dim
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}

    def normal(shape, std):
        return rng.normal(0.0, std, size=shape)

    n_num = len(schema.numerical)
    params["tok_num_w"] = normal((n_num, d), 0.5)
    params["tok_num_b"] = normal((n_num, d), 0.5)
    for f in schema.categorical:
        params[f"emb_{f.name}"] = normal((f.cardinality, d), 0.5)
    params["cls"] = normal((d,), 0.5)
    for layer in range(N_LAYERS):
        p = f"L{layer}."
        params[p + "ln1_g"] = np.ones(d)
        params[p + "ln1_b"] = np.zeros(d)
        for proj in ("q", "k", "v", "o"):
            # Query/key start hotter than Xavier: at d=4 the score scale is
            # otherwise so small that attention stays near uniform and the
            # maps carry no importance signal.
            std = 0.8 if proj in ("q", "k") else np.sqrt(2.0 / (2 * d))
            params[p + f"w{proj}"] = normal((d, d), std)
            # No key bias: it shifts every score in a softmax row equally and
            # therefore has an identically zero gradient.
            if proj != "k":
                params[p + f"b{proj}"] = np.zeros(d)
        params[p + "ln2_g"] = np.ones(d)
        params[p + "ln2_b"] = np.zeros(d)
        params[p + "w1"] = normal((d, 4 * d), np.sqrt(2.0 / (5 * d)))
        params[p + "b1"] = np.zeros(4 * d)
        params[p + "w2"] = normal((4 * d, d), np.sqrt(2.0 / (5 * d)))
        params[p + "b2"] = np.zeros(d)
    # Small head init keeps initial logits near zero so early training is not
    # spent recovering from saturated predictions.
    params["head_w"] = normal((d,), 0.1)
    params["head_b"] = np.zeros(1)
    return ModelBundle(
        schema=schema,
        params=params,
        norm_mean=np.zeros(n_num),
        norm_std=np.ones(n_num),
        version=version,
    )


# ---------------------------------------------------------------------------
# feature encoding


def encode_features(
    features: Sequence[FeatureVector], schema: FeatureSchema
) -> tuple[np.ndarray, np.ndarray]:
    """(numerical matrix, categorical code matrix), both in schema order."""
    num_names = [f.name for f in schema.numerical]
    cat = schema.categorical
    x_num = np.empty((len(features), len(num_names)))
    x_cat = np.empty((len(features), len(cat)), dtype=np.int64)
    for i, fv in enumerate(features):
        for j, name in enumerate(num_names):
            x_num[i, j] = getattr(fv, name)
        for j, f in enumerate(cat):
            code = getattr(fv, f.name)
            if not 0 <= code < f.cardinality:
                raise DataError(
                    f"categorical code {code} out of range for feature {f.name!r} "
                    f"(cardinality {f.cardinality})"
                )
            x_cat[i, j] = code
    return x_num, x_cat


def tokenize_batch(x_num: np.ndarray, x_cat: np.ndarray, bundle: ModelBundle) -> np.ndarray:
    """(B, n_tokens, d) token sequences, [CLS] at position 0."""
    schema = bundle.schema
    d = schema.embedding_dim
    B = x_num.shape[0]
    std = np.where(bundle.norm_std > 0, bundle.norm_std, 1.0)
    x_std = (x_num - bundle.norm_mean) / std
    tokens = np.empty((B, schema.n_tokens, d))
    tokens[:, 0, :] = bundle.params["cls"]
    n_num = x_num.shape[1]
    tokens[:, 1 : 1 + n_num, :] = (
        x_std[:, :, None] * bundle.params["tok_num_w"][None] + bundle.params["tok_num_b"][None]
    )
    for j, f in enumerate(schema.categorical):
        tokens[:, 1 + n_num + j, :] = bundle.params[f"emb_{f.name}"][x_cat[:, j]]
    return tokens


def tokenize(fv: FeatureVector, bundle: ModelBundle) -> np.ndarray:
    """Token sequence for one example: ((#features + 1) x d)."""
    x_num, x_cat = encode_features([fv], bundle.schema)
    return tokenize_batch(x_num, x_cat, bundle)[0]


# ---------------------------------------------------------------------------
# forward / backward


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv)

def _layer_norm_backward(dy, cache, g):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=(0, 1))
    db = dy.sum(axis=(0, 1))
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _split_heads(x, n_heads):
    B, T, d = x.shape
    return x.reshape(B, T, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _proj(x, w, b=None):
    # (B,T,d) @ (d,e) as one flat GEMM; small-matrix batched matmul is slow.
    B, T, d = x.shape
    out = x.reshape(B * T, d) @ w
    if b is not None:
        out += b
    return out.reshape(B, T, w.shape[1])

def _merge_heads(x):
    B, H, T, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * hd)


def _dropout_mask(rng, shape, rate):
    # Inverted dropout: mask already carries the 1/(1-rate) scale.
    m = rng.random(shape)
    np.greater_equal(m, rate, out=m)
    m *= 1.0 / (1.0 - rate)
    return m


def forward(
    tokens: np.ndarray,
    bundle: ModelBundle,
    dropout_active: bool = False,
    rng: Optional[np.random.Generator] = None,
    want_cache: bool = False,
):
    """Run the encoder; returns (p_correct, attention per layer[, cache]).

    tokens: (n_tokens, d) or (B, n_tokens, d). Attention arrays have shape
    (B, heads, n_tokens, n_tokens) with softmax applied (pre-dropout).
    """
    single = tokens.ndim == 2
    x = tokens[None] if single else tokens
    if x.shape[1] != bundle.schema.n_tokens:
        raise DataError(
            f"expected {bundle.schema.n_tokens} tokens, got {x.shape[1]}"
        )
    if dropout_active and rng is None:
        raise DataError("dropout requires an rng")
    P = bundle.params
    H = bundle.n_heads
    hd = bundle.schema.embedding_dim // H
    scale = 1.0 / np.sqrt(hd)
    attns = []
    cache = {"tokens": x} if want_cache else None
    for layer in range(bundle.n_layers):
        pre = f"L{layer}."
        h, ln1c = _layer_norm(x, P[pre + "ln1_g"], P[pre + "ln1_b"])
        q = _split_heads(_proj(h, P[pre + "wq"], P[pre + "bq"]), H)
        k = _split_heads(_proj(h, P[pre + "wk"]), H)
        v = _split_heads(_proj(h, P[pre + "wv"], P[pre + "bv"]), H)
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        attn = e / e.sum(axis=-1, keepdims=True)
        attns.append(attn)
        amask = _dropout_mask(rng, attn.shape, bundle.dropout_attn) if dropout_active else None
        a_used = attn * amask if amask is not None else attn
        ctx = _merge_heads(a_used @ v)
        attn_out = _proj(ctx, P[pre + "wo"], P[pre + "bo"])
        x_mid = x + attn_out
        h2, ln2c = _layer_norm(x_mid, P[pre + "ln2_g"], P[pre + "ln2_b"])
        u = _proj(h2, P[pre + "w1"], P[pre + "b1"])
        r = np.maximum(u, 0.0)
        fmask = _dropout_mask(rng, r.shape, bundle.dropout_ffn) if dropout_active else None
        r_used = r * fmask if fmask is not None else r
        ffn_out = _proj(r_used, P[pre + "w2"], P[pre + "b2"])
        x_new = x_mid + ffn_out
        if not np.isfinite(x_new).all():
            raise NumericError(f"non-finite activation in encoder layer {layer}")
        if want_cache:
            cache[pre] = {
                "x_in": x, "ln1": ln1c, "h": h, "q": q, "k": k, "v": v,
                "attn": attn, "amask": amask, "a_used": a_used, "ctx": ctx,
                "x_mid": x_mid, "ln2": ln2c, "h2": h2, "u": u, "fmask": fmask,
                "r_used": r_used,
            }
        x = x_new
    cls_state = x[:, 0, :]
    logit = cls_state @ P["head_w"] + P["head_b"][0]
    if not np.isfinite(logit).all():
        raise NumericError("non-finite activation in classification head")
    p = 1.0 / (1.0 + np.exp(-logit))
    if want_cache:
        cache["cls_state"] = cls_state
        cache["p"] = p
        return (p[0] if single else p), attns, cache
    return (p[0] if single else p), attns


def loss(p, target) -> float:
    """Soft-target binary cross-entropy, mean over the batch."""
    p = np.clip(np.asarray(p, dtype=np.float64), LOSS_EPS, 1.0 - LOSS_EPS)
    t = np.asarray(target, dtype=np.float64)
    return float(np.mean(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))))


def gradients(
    x_num: np.ndarray,
    x_cat: np.ndarray,
    targets: np.ndarray,
    bundle: ModelBundle,
    dropout_active: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> tuple[dict[str, np.ndarray], float, np.ndarray]:
    """Analytic backprop of the mean BCE loss; returns (grads, loss, p).

    Every entry of bundle.params receives a gradient array of matching shape.
    """
    P = bundle.params
    schema = bundle.schema
    B = x_num.shape[0]
    tokens = tokenize_batch(x_num, x_cat, bundle)
    p, _, cache = forward(tokens, bundle, dropout_active, rng, want_cache=True)
    t = np.asarray(targets, dtype=np.float64)
    loss_val = loss(p, t)

    # Only the scatter-accumulated blocks need zero init; the rest are
    # assigned in one shot during the backward walk.
    grads = {k: np.zeros_like(v) for k, v in P.items() if k.startswith("emb_")}
    H = bundle.n_heads
    d = schema.embedding_dim
    hd = d // H
    scale = 1.0 / np.sqrt(hd)

    def flat(a):  # (B,T,x) -> (B*T, x) view for single-GEMM weight grads
        return a.reshape(-1, a.shape[-1])

    dlogit = (p - t) / B  # d(mean BCE)/dlogit through the sigmoid
    grads["head_w"] = cache["cls_state"].T @ dlogit
    grads["head_b"] = np.array([dlogit.sum()])
    dx = np.zeros_like(tokens)
    dx[:, 0, :] = dlogit[:, None] * P["head_w"][None]

    for layer in reversed(range(bundle.n_layers)):
        pre = f"L{layer}."
        c = cache[pre]
        # FFN block: x_new = x_mid + (dropout(relu(h2@w1+b1)))@w2 + b2
        d_ffn = dx
        grads[pre + "w2"] = flat(c["r_used"]).T @ flat(d_ffn)
        grads[pre + "b2"] = d_ffn.sum(axis=(0, 1))
        d_r = _proj(d_ffn, P[pre + "w2"].T)
        if c["fmask"] is not None:
            d_r = d_r * c["fmask"]
        d_u = d_r * (c["u"] > 0.0)
        grads[pre + "w1"] = flat(c["h2"]).T @ flat(d_u)
        grads[pre + "b1"] = d_u.sum(axis=(0, 1))
        d_h2 = _proj(d_u, P[pre + "w1"].T)
        d_x_mid, dg2, db2 = _layer_norm_backward(d_h2, c["ln2"], P[pre + "ln2_g"])
        grads[pre + "ln2_g"], grads[pre + "ln2_b"] = dg2, db2
        d_x_mid = d_x_mid + dx  # residual

        # Attention block: x_mid = x_in + (merge(attn@v))@wo + bo
        d_attn_out = d_x_mid
        grads[pre + "wo"] = flat(c["ctx"]).T @ flat(d_attn_out)
        grads[pre + "bo"] = d_attn_out.sum(axis=(0, 1))
        d_ctx = _split_heads(_proj(d_attn_out, P[pre + "wo"].T), H)
        d_a_used = d_ctx @ c["v"].transpose(0, 1, 3, 2)
        d_v = c["a_used"].transpose(0, 1, 3, 2) @ d_ctx
        d_attn = d_a_used * c["amask"] if c["amask"] is not None else d_a_used
        a = c["attn"]
        d_scores = a * (d_attn - (d_attn * a).sum(axis=-1, keepdims=True))
        d_q = (d_scores @ c["k"]) * scale
        d_k = (d_scores.transpose(0, 1, 3, 2) @ c["q"]) * scale
        d_qm, d_km, d_vm = (_merge_heads(z) for z in (d_q, d_k, d_v))
        h = c["h"]
        for name, dz in (("q", d_qm), ("k", d_km), ("v", d_vm)):
            grads[pre + f"w{name}"] = flat(h).T @ flat(dz)
            if name != "k":
                grads[pre + f"b{name}"] = dz.sum(axis=(0, 1))
        d_h = _proj(d_qm, P[pre + "wq"].T) + _proj(d_km, P[pre + "wk"].T) + _proj(d_vm, P[pre + "wv"].T)
        d_x_in, dg1, db1 = _layer_norm_backward(d_h, c["ln1"], P[pre + "ln1_g"])
        grads[pre + "ln1_g"], grads[pre + "ln1_b"] = dg1, db1
        dx = d_x_in + d_x_mid  # residual

    # Tokenizer
    grads["cls"] = dx[:, 0, :].sum(axis=0)
    n_num = x_num.shape[1]
    std = np.where(bundle.norm_std > 0, bundle.norm_std, 1.0)
    x_std = (x_num - bundle.norm_mean) / std
    d_num_tok = dx[:, 1 : 1 + n_num, :]
    grads["tok_num_w"] = (x_std[:, :, None] * d_num_tok).sum(axis=0)
    grads["tok_num_b"] = d_num_tok.sum(axis=0)
    for j, f in enumerate(schema.categorical):
        g = grads[f"emb_{f.name}"]
        np.add.at(g, x_cat[:, j], dx[:, 1 + n_num + j, :])
    return grads, loss_val, p

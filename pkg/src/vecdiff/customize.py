"""Second-stage style customization.

A pluggable teacher turns an edge-control image into a styled raster. Pairs
of (generated SVG tensor, styled raster) are produced without gradients by
sampling the current model, rendering, extracting Canny edges, and calling
the teacher. Fine-tuning combines an image loss on the differentiably
rendered denoised prediction with a diffusion loss that re-noises that
prediction as fresh data.
"""

from __future__ import annotations

import base64
import io
import json
import threading
from dataclasses import asdict, dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import requests
import torch
from scipy import ndimage

from .codec import decode_tensor_torch
from .condition import TextEmbedding
from .diffusion import predict_s0, q_sample
from .errors import ConfigError, MalformedResponse, NumericalGuard, TeacherUnavailable
from .denoiser import attach_lora, lora_parameters
from .raster import canny_edges, rasterize, render_document
from .training import pack_text_batch

__all__ = [
    "ProceduralTeacherStyle",
    "ProceduralTeacher",
    "RemoteTeacher",
    "MockTeacherServer",
    "TrainingPair",
    "CustomizeConfig",
    "generate_pair",
    "generate_pairs",
    "style_finetune_step",
    "run_customization",
    "load_style_file",
]


# ---------------------------------------------------------------------------
# teachers

@dataclass
class ProceduralTeacherStyle:
    """Palette responses of the stand-in teacher for one style."""

    palette: list[tuple[float, float, float]]
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)
    outline_thickness: int = 1

    def __post_init__(self):
        if not self.palette:
            raise ConfigError("palette must be nonempty")


class ProceduralTeacher:
    """Deterministic stylizer: fills edge-complement regions from the palette.

    Regions touching the image border become background; the rest take
    palette colors by descending area rank; edges are drawn over the result
    at the configured thickness in the first palette color.
    """

    def __init__(self, styles: dict[str, ProceduralTeacherStyle]):
        self.styles = dict(styles)

    def stylize(self, edges: np.ndarray, prompt: str, style: str, seed: int) -> np.ndarray:
        if style not in self.styles:
            raise ConfigError(f"style {style!r} not configured")
        spec = self.styles[style]
        edges = np.asarray(edges).astype(bool)
        h, w = edges.shape
        img = np.empty((h, w, 3), dtype=np.float64)
        img[:] = spec.background

        labels, nlab = ndimage.label(~edges)
        if nlab:
            border = np.zeros_like(edges)
            border[0, :] = border[-1, :] = border[:, 0] = border[:, -1] = True
            background_ids = set(np.unique(labels[border & (labels > 0)]).tolist())
            areas = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, nlab + 1))
            order = [i + 1 for i in np.argsort(-areas) if (i + 1) not in background_ids]
            for rank, lab in enumerate(order):
                img[labels == lab] = spec.palette[rank % len(spec.palette)]
        outline = edges
        if spec.outline_thickness > 1:
            outline = ndimage.binary_dilation(edges, iterations=spec.outline_thickness - 1)
        img[outline] = spec.palette[0]
        return img


def _png_b64(img: np.ndarray) -> str:
    from PIL import Image

    arr = np.clip(np.asarray(img, dtype=np.float64) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _b64_png(data: str) -> np.ndarray:
    from PIL import Image

    with Image.open(io.BytesIO(base64.b64decode(data))) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


class RemoteTeacher:
    """Client for an HTTP stylization service (POST /stylize)."""

    def __init__(self, url: str, timeout: float = 10.0, retries: int = 3):
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.retries = retries

    def stylize(self, edges: np.ndarray, prompt: str, style: str, seed: int) -> np.ndarray:
        edges = np.asarray(edges)
        h, w = edges.shape
        body = {
            "prompt": prompt,
            "style_token": style,
            "control_png": _png_b64(edges.astype(np.float64)),
            "seed": int(seed),
            "width": int(w),
            "height": int(h),
        }
        last = None
        for _ in range(self.retries):
            try:
                resp = requests.post(f"{self.url}/stylize", json=body, timeout=self.timeout)
                if resp.status_code >= 500:
                    last = RuntimeError(f"server error {resp.status_code}")
                    continue
                resp.raise_for_status()
                payload = resp.json()
                break
            except requests.RequestException as e:
                last = e
        else:
            raise TeacherUnavailable(f"teacher at {self.url} unavailable: {last}")
        try:
            img = _b64_png(payload["image_png"])
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedResponse(f"bad /stylize payload: {e}") from e
        if img.shape[:2] != (h, w):
            raise MalformedResponse(f"teacher returned {img.shape[:2]}, requested {(h, w)}")
        return img


class MockTeacherServer:
    """Loopback teacher: echoes the control image back as the styled image.

    Supports failure injection (first fail_times requests get a 500) and a
    fixed response delay, which the client conformance tests use for the
    retry and timeout paths. Also serves /embed with deterministic hash
    embeddings so the remote embedder can be tested against a live server.
    """

    def __init__(self, port: int = 0, fail_times: int = 0, delay: float = 0.0, embed_dim: int = 64):
        self.fail_times = fail_times
        self.delay = delay
        self.embed_dim = embed_dim
        self._lock = threading.Lock()
        self._failures_left = fail_times
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _json(self, code, payload):
                raw = json.dumps(payload).encode()
                self.send_response(code)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(raw)))
                self.end_headers()
                self.wfile.write(raw)

            def do_POST(self):
                import time as _time

                if outer.delay:
                    _time.sleep(outer.delay)
                with outer._lock:
                    if outer._failures_left > 0:
                        outer._failures_left -= 1
                        self._json(500, {"error": "injected failure"})
                        return
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                if self.path == "/stylize":
                    self._json(200, {"image_png": body["control_png"]})
                elif self.path == "/embed":
                    import hashlib

                    embs = []
                    for text in body.get("texts", []):
                        digest = hashlib.sha256(text.encode()).digest()
                        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
                        embs.append(rng.standard_normal(outer.embed_dim).tolist())
                    self._json(200, {"embeddings": embs, "dim": outer.embed_dim})
                else:
                    self._json(404, {"error": f"unknown path {self.path}"})

        self._server = ThreadingHTTPServer(("127.0.0.1", port), Handler)
        self.port = self._server.server_address[1]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def start(self):
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


# ---------------------------------------------------------------------------
# pair generation

@dataclass
class TrainingPair:
    """Generated tensor plus the teacher's styled raster for it."""

    s0g: np.ndarray           # (28, 32) float32
    image: np.ndarray         # (H, W, 3) float64, teacher output
    prompt: str
    style: str | None
    seed: int
    edges: np.ndarray | None = None


def generate_pairs(model, prompts, styles, teacher, seed: int, cfg_scale: float = 1.0,
                   resolution=(64, 64), softness: float = 0.7,
                   canny_thresholds=(0.08, 0.2), cond_styles=None) -> list[TrainingPair]:
    """Sample tensors for the prompts, render, edge-extract, and stylize.

    Gradient-free by construction; model parameters are untouched. One pair
    per prompt, batched through the sampler for speed. `styles` selects the
    teacher's style; `cond_styles` (default: same) selects the conditioning
    token, and is None-per-entry in adapter mode, which trains without
    tokens.
    """
    cond_styles = list(styles) if cond_styles is None else list(cond_styles)
    tensors = model.sample_tensors(list(prompts), cond_styles, seed=seed, cfg_scale=cfg_scale)
    pairs = []
    for i, (prompt, style) in enumerate(zip(prompts, styles)):
        doc = model.decode(tensors[i])
        img_g = render_document(doc, resolution, softness)
        edges = canny_edges(img_g, *canny_thresholds)
        styled_prompt = model.styled_prompt(prompt, cond_styles[i])
        image = teacher.stylize(edges, styled_prompt, style, _pair_seed(seed, i))
        pairs.append(TrainingPair(
            s0g=tensors[i].numpy().astype(np.float32), image=image, prompt=prompt,
            style=cond_styles[i], seed=_pair_seed(seed, i), edges=edges,
        ))
    return pairs


def _pair_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, 977, index]).generate_state(1)[0])


def generate_pair(model, prompt: str, style: str | None, teacher, seed: int, **kw) -> TrainingPair:
    return generate_pairs(model, [prompt], [style], teacher, seed, **kw)[0]


# ---------------------------------------------------------------------------
# fine-tuning

def _pack_styled_text(base_embs: list[TextEmbedding], style_params: list[torch.Tensor | None]):
    """Batch base embeddings with trainable style vectors appended."""
    dim = base_embs[0].dim
    lens = [e.vectors.shape[0] + (0 if p is None else 1) for e, p in zip(base_embs, style_params)]
    length = max(lens)
    rows = []
    mask = torch.zeros(len(base_embs), length, dtype=torch.bool)
    for i, (emb, p) in enumerate(zip(base_embs, style_params)):
        parts = [torch.from_numpy(emb.vectors)]
        if p is not None:
            parts.append(p[None, :])
        row = torch.cat(parts, dim=0)
        mask[i, : row.shape[0]] = True
        if row.shape[0] < length:
            row = torch.cat([row, torch.zeros(length - row.shape[0], dim)], dim=0)
        rows.append(row)
    return torch.stack(rows), mask


def style_finetune_step(model, pairs: list[TrainingPair], sched, optimizer,
                        generator: torch.Generator, style_params=None, t=None,
                        loss_resolution=(64, 64), softness: float = 0.7):
    """One combined-loss update on a minibatch of pairs.

    Image loss: noise s0g at t, predict the denoised tensor, render it
    differentiably, and weight the MSE against the teacher image by
    w_t = 1 - alpha_bar_t. Diffusion loss: re-noise the (detached) denoised
    prediction at a fresh t' and regress the model's noise prediction.
    Returns (l_img, l_dm, total) floats after the optimizer step.
    """
    b = len(pairs)
    s0 = torch.from_numpy(np.stack([p.s0g for p in pairs])).float()
    targets = torch.from_numpy(np.stack([p.image for p in pairs])).float()
    base = [model.embedder.embed(p.prompt) for p in pairs]
    svec = [None if style_params is None or p.style is None else style_params[p.style] for p in pairs]
    text, text_mask = _pack_styled_text(base, svec)

    if t is None:
        t = torch.randint(1, sched.T + 1, (b,), generator=generator)
    else:
        t = torch.as_tensor(t).expand(b) if torch.as_tensor(t).dim() == 0 else torch.as_tensor(t)
    eps = torch.randn(s0.shape, generator=generator)
    s_t = q_sample(s0, t, eps, sched)
    eps_pred = model.denoiser(s_t, t, text, text_mask=text_mask)
    s0_hat = predict_s0(s_t, t, eps_pred, sched)

    omega = torch.from_numpy(1.0 - sched.alpha_bars[t.numpy()]).float()
    imgs = []
    for i in range(b):
        paths = decode_tensor_torch(s0_hat[i], model.vae, model.normalizer)
        imgs.append(rasterize(paths, loss_resolution, softness))
    rendered = torch.stack(imgs)
    l_img = (omega * ((rendered - targets) ** 2).mean(dim=(1, 2, 3))).mean()

    t2 = torch.randint(1, sched.T + 1, (b,), generator=generator)
    eps2 = torch.randn(s0.shape, generator=generator)
    data = s0_hat.detach()
    x_t2 = q_sample(data, t2, eps2, sched)
    eps2_pred = model.denoiser(x_t2, t2, text, text_mask=text_mask)
    l_dm = ((eps2 - eps2_pred) ** 2).mean()

    total = l_img + l_dm
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return l_img.item(), l_dm.item(), total.item()


@dataclass
class CustomizeConfig:
    mode: str = "multi"            # multi | single | lora
    iterations: int = 600
    batch_size: int = 8
    lr: float = 4e-6
    style_lr: float = 0.0          # lr for the fresh style vectors; 0 = use lr
    seed: int = 0
    total_pairs: int = 1000        # generated across the run
    pool_rounds: int = 4           # pair pool refreshes (uses the current model)
    pair_cfg_scale: float = 1.0
    loss_resolution: int = 64
    softness: float = 0.7
    canny_low: float = 0.08
    canny_high: float = 0.2
    lora_rank: int = 4
    lora_alpha: float = 8.0
    checkpoint_interval: int = 0
    out: str = ""
    prompts: list[str] = field(default_factory=list)

    def validate(self):
        if self.mode not in ("multi", "single", "lora"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.lr <= 0 or self.batch_size < 1 or self.iterations < 0:
            raise ConfigError("bad lr/batch_size/iterations")
        if not self.prompts:
            raise ConfigError("prompts must be nonempty")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "CustomizeConfig":
        data = json.loads(text)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data).validate()


def run_customization(model, styles: list[str], teacher, config: CustomizeConfig,
                      on_checkpoint=None) -> dict:
    """Customize the model to the given styles; returns a loss history.

    Modes: "multi" fine-tunes the full model plus one style vector per style;
    "single" is the same with exactly one style; "lora" freezes the base,
    trains adapters only, and uses unstyled prompts (no token). Pairs are
    generated in pool_rounds pools from the current model and cycled between
    refreshes.
    """
    config.validate()
    if config.mode == "lora":
        if len(styles) != 1:
            raise ConfigError("lora mode customizes exactly one style")
    if config.mode == "single" and len(styles) != 1:
        raise ConfigError("single mode customizes exactly one style")

    rng = np.random.default_rng(config.seed)
    generator = torch.Generator().manual_seed(config.seed)
    style_params = None
    if config.mode in ("multi", "single"):
        for name in styles:
            model.registry.register(name)
        style_params = {
            name: torch.nn.Parameter(torch.from_numpy(model.registry.vector(name).copy()))
            for name in styles
        }
        groups = [
            {"params": list(model.denoiser.parameters()), "lr": config.lr},
            {"params": list(style_params.values()), "lr": config.style_lr or config.lr},
        ]
        optimizer = torch.optim.Adam(groups)
    else:
        attach_lora(model.denoiser, rank=config.lora_rank, alpha=config.lora_alpha, seed=config.seed)
        optimizer = torch.optim.Adam(list(lora_parameters(model.denoiser)), lr=config.lr)

    history = {"l_img": [], "l_dm": [], "pairs_generated": 0}
    rounds = max(1, config.pool_rounds)
    pairs_per_round = [config.total_pairs // rounds] * rounds
    pairs_per_round[-1] += config.total_pairs - sum(pairs_per_round)
    steps_per_round = [config.iterations // rounds] * rounds
    steps_per_round[-1] += config.iterations - sum(steps_per_round)

    step_count = 0
    for rnd in range(rounds):
        n = pairs_per_round[rnd]
        if n > 0:
            prompts = [config.prompts[int(rng.integers(len(config.prompts)))] for _ in range(n)]
            chosen = [styles[int(rng.integers(len(styles)))] for _ in range(n)]
            # adapter mode trains without style tokens: unconditional on style
            cond = [None] * n if config.mode == "lora" else chosen
            pool = generate_pairs(
                model, prompts, chosen, teacher, seed=config.seed * 1000 + rnd,
                cfg_scale=config.pair_cfg_scale,
                resolution=(config.loss_resolution, config.loss_resolution),
                softness=config.softness,
                canny_thresholds=(config.canny_low, config.canny_high),
                cond_styles=cond,
            )
            history["pairs_generated"] += len(pool)
        model.denoiser.train()
        for _ in range(steps_per_round[rnd]):
            batch = [pool[int(i)] for i in rng.integers(0, len(pool), config.batch_size)]
            for _attempt in range(8):
                try:
                    l_img, l_dm, _ = style_finetune_step(
                        model, batch, model.sched, optimizer, generator,
                        style_params=style_params,
                        loss_resolution=(config.loss_resolution, config.loss_resolution),
                        softness=config.softness,
                    )
                    break
                except NumericalGuard:
                    continue  # redraw t; alpha_bar too small at the sampled step
            history["l_img"].append(l_img)
            history["l_dm"].append(l_dm)
            step_count += 1
            if config.checkpoint_interval and on_checkpoint and step_count % config.checkpoint_interval == 0:
                _sync_registry(model, style_params)
                on_checkpoint(step_count)
        model.denoiser.eval()
    _sync_registry(model, style_params)
    if on_checkpoint:
        on_checkpoint(step_count)
    return history


def _sync_registry(model, style_params):
    if style_params:
        for name, param in style_params.items():
            model.registry.set_vector(name, param.detach().numpy())


def load_style_file(path) -> dict[str, ProceduralTeacherStyle]:
    """Parse the style configuration JSON into procedural teacher styles."""
    data = json.loads(open(path, encoding="utf-8").read())
    styles = {}
    for item in data["styles"]:
        styles[item["name"]] = ProceduralTeacherStyle(
            palette=[tuple(c) for c in item.get("palette", [[0.0, 0.0, 0.0]])],
            background=tuple(item.get("background", [1.0, 1.0, 1.0])),
            outline_thickness=int(item.get("outline_thickness", 1)),
        )
    return styles

"""HTTP client for the guidance service.

Wire format (shared contract with the service): every POST body is one JSON
header line terminated by '\\n', followed by the declared tensors' raw
little-endian float32 payloads, concatenated in header order. Responses mirror
the layout with a single tensor. The JSON header carries request metadata
({"request_id", "t", "omega", scalar fields}) and a "tensors" list of
{"name", "dtype": "f32", "shape"} entries; payload length must equal
4 * prod(shape) per tensor.

Failures map to two exceptions: ProtocolError (malformed frame, with the byte
offset where parsing failed) and GuidanceUnavailable (transport errors,
timeouts, non-2xx responses). The trainer skips the step and continues on
either.
"""

from __future__ import annotations

import itertools
import json
import uuid

import numpy as np
import requests


class ProtocolError(RuntimeError):
    def __init__(self, message: str, byte_offset: int | None = None):
        if byte_offset is not None:
            message = f"{message} (at byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


class GuidanceUnavailable(RuntimeError):
    pass


def encode_frame(meta: dict, tensors: dict[str, np.ndarray] | None = None) -> bytes:
    tensors = tensors or {}
    header = dict(meta)
    header["tensors"] = [
        {"name": name, "dtype": "f32", "shape": list(arr.shape)}
        for name, arr in tensors.items()
    ]
    body = json.dumps(header).encode() + b"\n"
    for arr in tensors.values():
        body += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return body


def decode_frame(body: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    newline = body.find(b"\n")
    if newline < 0:
        raise ProtocolError("missing JSON header line", byte_offset=0)
    try:
        header = json.loads(body[:newline].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        offset = getattr(exc, "pos", 0)
        raise ProtocolError(f"malformed JSON header: {exc}", byte_offset=offset) from exc
    tensors: dict[str, np.ndarray] = {}
    cursor = newline + 1
    for decl in header.get("tensors", []):
        shape = tuple(decl["shape"])
        if decl.get("dtype", "f32") != "f32":
            raise ProtocolError(f"unsupported dtype {decl.get('dtype')!r}", byte_offset=cursor)
        n_bytes = 4 * int(np.prod(shape, dtype=np.int64)) if shape else 4
        chunk = body[cursor:cursor + n_bytes]
        if len(chunk) != n_bytes:
            raise ProtocolError(
                f"tensor {decl['name']!r} payload truncated: expected {n_bytes} bytes, "
                f"got {len(chunk)}", byte_offset=cursor)
        tensors[decl["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(shape)
        cursor += n_bytes
    if cursor != len(body):
        raise ProtocolError(f"{len(body) - cursor} trailing bytes after declared tensors",
                            byte_offset=cursor)
    return header, tensors


class RemoteBackend:
    """Guidance backend that defers denoising to the service over HTTP.

    One synchronous in-flight request at a time; the noise schedule is adopted
    from the service model card so add_noise and the service's MMSE math agree.
    """

    name = "remote"

    def __init__(self, endpoint: str, timeout: float = 30.0,
                 depth_required: bool | None = None):
        from .guidance import NoiseSchedule  # local import to avoid a cycle

        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.session = requests.Session()
        self._ids = itertools.count()
        card = self.info()
        sched = card.get("schedule", {})
        self.schedule = NoiseSchedule(
            family=sched.get("family", "scaled_linear"),
            num_steps=sched.get("num_steps", 1000),
            beta_start=sched.get("beta_start", 0.00085),
            beta_end=sched.get("beta_end", 0.012))
        self.model_version = card.get("model_version", "unknown")
        self.input_multiple = int(card.get("input_multiple", 1))
        if not card.get("pixel_latent", False):
            raise GuidanceUnavailable(
                "service model does not expose a pixel-space latent; this engine "
                "cannot backpropagate through a server-side autoencoder")
        self.depth_required = (bool(card.get("depth_conditioned", False))
                               if depth_required is None else depth_required)

    # -- transport helpers ------------------------------------------------------

    def _request_id(self) -> str:
        return f"{uuid.uuid4().hex[:8]}-{next(self._ids)}"

    def _post(self, path: str, meta: dict, tensors: dict | None = None) -> tuple[dict, dict]:
        meta = dict(meta)
        meta.setdefault("request_id", self._request_id())
        body = encode_frame(meta, tensors)
        try:
            resp = self.session.post(self.endpoint + path, data=body,
                                     timeout=self.timeout,
                                     headers={"Content-Type": "application/x-tensor-stream"})
        except requests.RequestException as exc:
            raise GuidanceUnavailable(f"guidance service unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise GuidanceUnavailable(
                f"guidance service error {resp.status_code} on {path}: "
                f"{resp.content[:200].decode(errors='replace')}")
        header, payload = decode_frame(resp.content)
        if header.get("request_id") != meta["request_id"]:
            raise ProtocolError(
                f"response id {header.get('request_id')!r} does not echo request id "
                f"{meta['request_id']!r}")
        return header, payload

    def info(self) -> dict:
        try:
            resp = self.session.get(self.endpoint + "/info", timeout=self.timeout)
        except requests.RequestException as exc:
            raise GuidanceUnavailable(f"guidance service unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise GuidanceUnavailable(f"guidance service /info returned {resp.status_code}")
        return resp.json()

    # -- endpoints ---------------------------------------------------------------

    def embed(self, prompt: str) -> np.ndarray:
        if not prompt:
            raise ValueError("prompt must be nonempty")
        _, tensors = self._post("/embed_text", {"prompt": prompt})
        return tensors["embedding"]

    def validate_image_shape(self, shape) -> None:
        h, w = shape[0], shape[1]
        if h % self.input_multiple or w % self.input_multiple:
            raise ValueError(
                f"image dimensions {h}x{w} must be divisible by the model's "
                f"input multiple {self.input_multiple}")

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        self.validate_image_shape(image.shape)
        _, tensors = self._post("/encode_image", {}, {"image": image})
        return tensors["latent"]

    def decode_latent(self, latent: np.ndarray) -> np.ndarray:
        _, tensors = self._post("/decode_latent", {}, {"latent": latent})
        return tensors["image"]

    def predict(self, z_t: np.ndarray, embedding: np.ndarray, t: float,
                depth: np.ndarray | None, omega: float,
                negative_embedding: np.ndarray | None = None) -> np.ndarray:
        if self.depth_required and depth is None:
            raise ValueError("depth conditioning is enabled but no depth map was "
                             "provided; refusing to send the request")
        tensors = {"z_t": z_t, "embedding": embedding}
        if negative_embedding is not None:
            tensors["negative_embedding"] = negative_embedding
        if depth is not None:
            tensors["depth"] = depth
        meta = {"t": float(t)}
        if omega is not None:
            meta["omega"] = float(omega)
        _, payload = self._post("/predict_noise", meta, tensors)
        return payload["noise_pred"].astype(np.float64)

    def clip_score(self, image: np.ndarray, prompt: str) -> float:
        header, _ = self._post("/clip_score", {"prompt": prompt}, {"image": image})
        return float(header["score"])

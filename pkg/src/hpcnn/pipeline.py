"""
Two-level classification: a service model on reduced-size input routes each
packet to the application model registered for that service, which runs on
full-size input. Verdicts carry the DSCP codepoint of the service.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cnn import CnnModel, predict_proba
from .encoder import EncoderConfig, downsample, encode_full
from .errors import BadDscp, DuplicateApplication, HpcError, UnknownServiceReference
from .pcap import RawPacket


@dataclass(frozen=True)
class Catalog:
    services: tuple[str, ...]
    app_to_service: Mapping[str, str]
    dscp_map: Mapping[str, int]

    def __post_init__(self):
        object.__setattr__(self, "services", tuple(self.services))
        if len(set(self.services)) != len(self.services):
            raise HpcError("duplicate service name")
        for app, service in self.app_to_service.items():
            if service not in self.services:
                raise UnknownServiceReference(f"application {app!r} references unknown service {service!r}")
        if set(self.dscp_map) != set(self.services):
            raise BadDscp("every service needs exactly one DSCP codepoint")
        for service, code in self.dscp_map.items():
            if not 0 <= code <= 63:
                raise BadDscp(f"DSCP {code} for {service!r} outside [0, 63]")
        if len(set(self.dscp_map.values())) != len(self.dscp_map):
            raise BadDscp("DSCP codepoints must be distinct per service")

    @property
    def applications(self) -> tuple[str, ...]:
        return tuple(self.app_to_service)

    def apps_of(self, service: str) -> tuple[str, ...]:
        return tuple(a for a, s in self.app_to_service.items() if s == service)


def parse_catalog(text: str, source: str = "<catalog>") -> Catalog:
    """
    Parse the line-oriented catalog format::

        service <name> dscp <0-63>
        app <application_name> <service_name>

    ``#`` starts a comment. Declarations may appear in any order.
    """
    services: dict[str, int] = {}
    apps: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        words = line.split("#", 1)[0].split()
        if not words:
            continue
        where = f"{source}:{lineno}"
        if words[0] == "service" and len(words) == 4 and words[2] == "dscp":
            if words[1] in services:
                raise HpcError(f"{where}: service {words[1]!r} declared twice")
            try:
                services[words[1]] = int(words[3])
            except ValueError:
                raise BadDscp(f"{where}: DSCP {words[3]!r} is not an integer") from None
        elif words[0] == "app" and len(words) == 3:
            if words[1] in apps:
                raise DuplicateApplication(f"{where}: application {words[1]!r} already assigned to {apps[words[1]]!r}")
            apps[words[1]] = words[2]
        else:
            raise HpcError(f"{where}: cannot parse {line.strip()!r}")
    return Catalog(tuple(services), apps, services)


def load_catalog(path) -> Catalog:
    return parse_catalog(Path(path).read_text(), str(path))


def default_catalog() -> Catalog:
    """Two services (chat, video) over the six evaluated applications."""
    return parse_catalog(resources.files("hpcnn").joinpath("data/catalog.txt").read_text(), "catalog.txt")


@dataclass(frozen=True)
class PacketVerdict:
    service: str
    service_probability: float
    dscp: int
    application: str | None = None
    application_probability: float | None = None
    timings: Mapping[str, int] = field(default_factory=dict)  # nanoseconds per stage


@dataclass
class BatchResult:
    """Verdicts in input order; failed packets hold ``None`` and appear in ``errors``."""

    verdicts: list[PacketVerdict | None]
    errors: dict[int, Exception]
    seconds: float

    def __len__(self):
        return len(self.verdicts)

    def __iter__(self):
        return iter(self.verdicts)

    def __getitem__(self, i):
        return self.verdicts[i]


def _model_input(model: CnnModel, full: np.ndarray) -> np.ndarray:
    side = full.shape[-1]
    return full if model.input_side == side else downsample(full, model.input_side)


@dataclass(frozen=True, eq=False)
class HierarchicalClassifier:
    service_model: CnnModel
    catalog: Catalog
    app_models: Mapping[str, CnnModel] = field(default_factory=dict)
    encoder_config: EncoderConfig = EncoderConfig()

    def __post_init__(self):
        if self.service_model.class_names != self.catalog.services:
            raise HpcError(
                f"service model classes {self.service_model.class_names} != catalog services {self.catalog.services}"
            )
        sides = (self.encoder_config.full_side, self.encoder_config.reduced_side)
        for service, model in self.app_models.items():
            if service not in self.catalog.services:
                raise UnknownServiceReference(f"application model registered for unknown service {service!r}")
            stray = set(model.class_names) - set(self.catalog.apps_of(service))
            if stray:
                raise HpcError(f"{service!r} model has classes outside the service: {sorted(stray)}")
        for model in (self.service_model, *self.app_models.values()):
            if model.input_side not in sides:
                raise HpcError(f"model input side {model.input_side} not one of {sides}")

    def classify_matrices(self, full: np.ndarray) -> list[PacketVerdict]:
        """Batch classification of full-size matrices ``(n, S, S)``; stage timings are amortized per packet."""
        n = len(full)
        if n == 0:
            return []
        t0 = time.perf_counter_ns()
        service_probs = predict_proba(self.service_model, _model_input(self.service_model, full))
        service_idx = np.argmax(service_probs, axis=1)
        t_service = (time.perf_counter_ns() - t0) // n

        app_name: list[str | None] = [None] * n
        app_prob: list[float | None] = [None] * n
        t_app = [0] * n
        for s, service in enumerate(self.catalog.services):
            model = self.app_models.get(service)
            rows = np.flatnonzero(service_idx == s)
            if model is None or len(rows) == 0:
                continue
            t0 = time.perf_counter_ns()
            probs = predict_proba(model, _model_input(model, full[rows]))
            elapsed = (time.perf_counter_ns() - t0) // len(rows)
            best = np.argmax(probs, axis=1)
            for r, b, p in zip(rows, best, probs):
                app_name[r] = model.class_names[b]
                app_prob[r] = float(p[b])
                t_app[r] = elapsed

        verdicts = []
        for i in range(n):
            service = self.catalog.services[service_idx[i]]
            timings = {"service_ns": int(t_service)}
            if app_name[i] is not None:
                timings["application_ns"] = int(t_app[i])
            verdicts.append(
                PacketVerdict(
                    service=service,
                    service_probability=float(service_probs[i, service_idx[i]]),
                    dscp=self.catalog.dscp_map[service],
                    application=app_name[i],
                    application_probability=app_prob[i],
                    timings=timings,
                )
            )
        return verdicts


def classify_service(h: HierarchicalClassifier, packet: RawPacket) -> tuple[str, float]:
    full = encode_full(packet, h.encoder_config)
    probs = predict_proba(h.service_model, _model_input(h.service_model, full[None]))[0]
    best = int(np.argmax(probs))
    return h.service_model.class_names[best], float(probs[best])


def classify_full(h: HierarchicalClassifier, packet: RawPacket) -> PacketVerdict:
    t0 = time.perf_counter_ns()
    full = encode_full(packet, h.encoder_config)
    encode_ns = time.perf_counter_ns() - t0
    verdict = h.classify_matrices(full[None])[0]
    timings = {"encode_ns": encode_ns, **verdict.timings}
    return PacketVerdict(
        verdict.service, verdict.service_probability, verdict.dscp,
        verdict.application, verdict.application_probability, timings,
    )


def classify_batch(h: HierarchicalClassifier, packets: Sequence[RawPacket]) -> BatchResult:
    start = time.perf_counter()
    errors: dict[int, Exception] = {}
    ok: list[int] = []
    side = h.encoder_config.full_side
    full = np.zeros((len(packets), side, side))
    for i, p in enumerate(packets):
        try:
            full[i] = encode_full(p, h.encoder_config)
            ok.append(i)
        except Exception as e:  # collected per packet, never fatal
            errors[i] = e
    verdicts: list[PacketVerdict | None] = [None] * len(packets)
    for i, v in zip(ok, h.classify_matrices(full[ok])):
        verdicts[i] = v
    return BatchResult(verdicts, errors, time.perf_counter() - start)

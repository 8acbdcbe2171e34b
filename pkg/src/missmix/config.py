"""Run-configuration files.

INI-style sections with ``key = value`` lines and ``#`` comments:

    [scenario]
    g = 2
    p = 1
    weights = 0.5, 0.5
    means = -1.0; 1.0          # components separated by ';'
    covariances = 1.0          # one block when homoscedastic, else g blocks
    homoscedastic = true
    mechanism = MAR_ENTROPY
    xi = -1.0, 2.0
    n = 200
    replicates = 500
    seed = 42

Every diagnostic names the offending key and line. Unknown keys are
rejected (catches typos that would otherwise silently fall back to
defaults), duplicate keys report both line numbers, and the config
digest is invariant under comments and key order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .em import FitOptions, InitStrategy
from .errors import ConfigError
from .mechanisms import MechanismFamily, MechanismSpec
from .mixture import MixtureParams
from .simlab import Estimator, ScenarioConfig


@dataclass(frozen=True)
class RawConfig:
    """Parsed sections: section -> key -> (value string, line number)."""

    sections: dict
    digest: str

    def section(self, name: str) -> "SectionView":
        return SectionView(name, self.sections.get(name, {}))

    def has_section(self, name: str) -> bool:
        return name in self.sections


def parse_config(path: str) -> RawConfig:
    """Parse and digest a config file.

    Raises:
        ConfigError: malformed line, duplicate section, or duplicate key
            (reporting both line numbers).
    """
    sections: dict = {}
    current: str | None = None
    section_lines: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, rawline in enumerate(fh, start=1):
            line = rawline.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                name = line[1:-1].strip()
                if not name:
                    raise ConfigError("empty section name", line=lineno)
                if name in sections:
                    raise ConfigError(
                        f"duplicate section [{name}] (first at line "
                        f"{section_lines[name]})", line=lineno)
                sections[name] = {}
                section_lines[name] = lineno
                current = name
                continue
            if "=" not in line:
                raise ConfigError(f"expected 'key = value', got {line!r}",
                                  line=lineno)
            if current is None:
                raise ConfigError("key outside any [section]", line=lineno)
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not key:
                raise ConfigError("empty key", line=lineno)
            if key in sections[current]:
                first = sections[current][key][1]
                raise ConfigError(
                    f"duplicate key in [{current}]: lines {first} and {lineno}",
                    key=key, line=lineno)
            sections[current][key] = (value, lineno)
    canonical = []
    for name in sorted(sections):
        canonical.append(f"[{name}]")
        for key in sorted(sections[name]):
            canonical.append(f"{key}={sections[name][key][0]}")
    digest = hashlib.sha256("\n".join(canonical).encode("utf-8")).hexdigest()
    return RawConfig(sections=sections, digest=digest)


class SectionView:
    """Typed access to one section with unknown-key detection."""

    def __init__(self, name: str, entries: dict):
        self.name = name
        self.entries = entries
        self.consumed: set = set()

    def _raw(self, key: str, required: bool):
        if key not in self.entries:
            if required:
                raise ConfigError(f"missing required key in [{self.name}]", key=key)
            return None
        self.consumed.add(key)
        return self.entries[key]

    def _convert(self, key, conv, typename, required, default):
        raw = self._raw(key, required)
        if raw is None:
            return default
        value, line = raw
        try:
            return conv(value)
        except (ValueError, KeyError):
            raise ConfigError(f"expected {typename}, got {value!r}",
                              key=key, line=line) from None

    def line(self, key: str) -> int | None:
        return self.entries[key][1] if key in self.entries else None

    def get_str(self, key, required=False, default=None):
        return self._convert(key, str, "a string", required, default)

    def get_int(self, key, required=False, default=None):
        return self._convert(key, lambda v: int(v, 0), "an integer", required, default)

    def get_float(self, key, required=False, default=None):
        return self._convert(key, float, "a number", required, default)

    def get_bool(self, key, required=False, default=None):
        def conv(v):
            s = v.strip().lower()
            if s in ("true", "yes", "1", "on"):
                return True
            if s in ("false", "no", "0", "off"):
                return False
            raise ValueError(s)
        return self._convert(key, conv, "a boolean", required, default)

    def get_floats(self, key, required=False, default=None):
        def conv(v):
            return np.array([float(t) for t in v.split(",") if t.strip() != ""])
        return self._convert(key, conv, "a comma-separated number list",
                             required, default)

    def get_blocks(self, key, required=False, default=None):
        """Semicolon-separated groups of comma-separated numbers."""
        def conv(v):
            return [np.array([float(t) for t in blk.split(",") if t.strip() != ""])
                    for blk in v.split(";")]
        return self._convert(key, conv, "';'-separated number blocks",
                             required, default)

    def get_enum(self, key, enum_cls, required=False, default=None):
        def conv(v):
            return enum_cls(v.strip().upper())
        return self._convert(key, conv,
                             "one of " + "/".join(e.value for e in enum_cls),
                             required, default)

    def error(self, message: str, key: str):
        raise ConfigError(message, key=key, line=self.line(key))

    def finish(self):
        unknown = set(self.entries) - self.consumed
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigError(f"unknown key in [{self.name}]", key=key,
                              line=self.line(key))


def _build_theta(view: SectionView) -> MixtureParams:
    g = view.get_int("g", default=2)
    p = view.get_int("p", default=1)
    weights = view.get_floats("weights", required=True)
    if weights.shape[0] != g:
        view.error(f"need {g} weights, got {weights.shape[0]}", "weights")
    if abs(float(weights.sum()) - 1.0) > 1e-12:
        view.error(f"weights must sum to 1, got {float(weights.sum())!r}", "weights")
    mean_blocks = view.get_blocks("means", required=True)
    if len(mean_blocks) != g or any(b.shape[0] != p for b in mean_blocks):
        view.error(f"means must give {g} components of dimension {p}", "means")
    homo = view.get_bool("homoscedastic", default=True)
    cov_blocks = view.get_blocks("covariances", required=True)
    want = 1 if homo else g
    if len(cov_blocks) != want or any(b.shape[0] != p * p for b in cov_blocks):
        view.error(
            f"covariances must give {want} block(s) of {p * p} entries", "covariances")
    covs = np.stack([b.reshape(p, p) for b in cov_blocks])
    if homo:
        covs = np.repeat(covs, g, axis=0)
    try:
        return MixtureParams(g=g, weights=weights,
                             means=np.stack(mean_blocks), covariances=covs,
                             homoscedastic=homo)
    except Exception as err:
        view.error(f"invalid mixture parameters: {err}", "weights")


def _build_mechanism(view: SectionView) -> MechanismSpec:
    family = view.get_enum("mechanism", MechanismFamily, required=True)
    xi = view.get_floats("xi", required=True)
    try:
        return MechanismSpec(family, xi)
    except Exception as err:
        view.error(f"invalid mechanism: {err}", "xi")


def build_fit_options(raw: RawConfig, seed_override: int | None = None) -> FitOptions:
    view = raw.section("fit")
    opts = dict(
        max_iter=view.get_int("max_iter", default=500),
        rel_tol=view.get_float("rel_tol", default=1e-8),
        n_restarts=view.get_int("n_restarts", default=5),
        seed=view.get_int("seed", default=0),
        init_strategy=view.get_enum("init", InitStrategy,
                                    default=InitStrategy.LABELLED_MLE),
        ridge=view.get_float("ridge", default=1e-6),
    )
    # keys used only by the `fit` subcommand are consumed there
    for extra in ("data", "family", "g", "homoscedastic"):
        if extra in view.entries:
            view.consumed.add(extra)
    view.finish()
    if seed_override is not None:
        opts["seed"] = seed_override
    try:
        return FitOptions(**opts)
    except Exception as err:
        raise ConfigError(f"invalid [fit] options: {err}") from None


def build_scenario(raw: RawConfig, seed_override: int | None = None) -> ScenarioConfig:
    view = raw.section("scenario")
    theta = _build_theta(view)
    mechanism = _build_mechanism(view)
    estimators = view.get_str(
        "estimators", default="COMPLETE, PARTIAL_FULL, PARTIAL_IGNORABLE")
    try:
        est = tuple(Estimator(tok.strip().upper())
                    for tok in estimators.split(",") if tok.strip())
    except ValueError:
        view.error(f"unknown estimator in {estimators!r}", "estimators")
    cfg = dict(
        theta_true=theta,
        mechanism=mechanism,
        n=view.get_int("n", required=True),
        n_test=view.get_int("n_test", default=100_000),
        replicates=view.get_int("replicates", default=1),
        seed=view.get_int("seed", required=True),
        estimators=est,
    )
    view.finish()
    if seed_override is not None:
        cfg["seed"] = seed_override
    fit_options = build_fit_options(raw) if raw.has_section("fit") else FitOptions()
    try:
        return ScenarioConfig(fit_options=fit_options, **cfg)
    except Exception as err:
        raise ConfigError(f"invalid [scenario]: {err}") from None

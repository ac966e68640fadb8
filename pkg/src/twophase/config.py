"""Case configuration files (INI syntax, read with :mod:`configparser`).

Sections and keys (``*`` marks required keys)::

    [mesh]      backend*  = ddfv | cvfe
                nx*, ny*  = cells per direction (unless ``file`` is given)
                file      = path to a mesh text file (see ``twophase.meshio``)
                distortion = 0.0      split = diagonal | acute
                dirichlet = left      (sides: left right bottom top all)
                seed      = 0
    [fluid]     any FluidModel field, e.g. ``mobility_exponent = 2``
    [medium]    porosity = 0.3        permeability = kxx kxy kyy
    [region:NAME]  box = x0 x1 y0 y1, porosity, permeability (override inside the box)
    [time]      dt*, t_final*
    [solver]    tol, max_iter, eps0, eta0, factor, levels, max_refinements
    [initial]   profile = zero | bump | drainage, p_w_level, plus profile parameters
    [verify]    seed, lem1_samples, state_samples, norm_fields, distortion
    [output]    directory, formats = csv json
"""
from __future__ import annotations

import configparser
import os
import re
from dataclasses import dataclass, fields

import numpy as np

from .cvfe import CvfeScheme, build_from_triangles, build_triangulation
from .ddfv_mesh import build_from_polygons, build_structured
from .ddfv_scheme import DdfvScheme
from .discrete import boundary_sides
from .errors import ConfigError, InvalidMesh, InvalidParams
from .fluid import FluidModel
from .meshio import read_mesh
from .profiles import PROFILES, initial_state
from .solver import default_ladder

__all__ = ["CaseConfig", "load_config", "parse_config"]

BACKENDS = ("ddfv", "cvfe")
_FLUID_FIELDS = {f.name: f.type for f in fields(FluidModel) if not f.name.startswith("_")}


class _Source:
    """Maps ``(section, key)`` to a line number for error messages."""

    def __init__(self, text, name):
        self.name = name
        self.lines = {}
        section = None
        for no, line in enumerate(text.splitlines(), 1):
            m = re.match(r"\s*\[([^\]]+)\]", line)
            if m:
                section = m.group(1).strip()
                self.lines[(section, None)] = no
                continue
            m = re.match(r"\s*([A-Za-z0-9_]+)\s*[=:]", line)
            if m and section is not None:
                self.lines[(section, m.group(1).lower())] = no

    def where(self, section, key=None):
        no = self.lines.get((section, key)) or self.lines.get((section, None))
        return f"{self.name}:{no}" if no else self.name


@dataclass
class CaseConfig:
    parser: configparser.ConfigParser
    source: _Source

    # -- typed accessors ------------------------------------------------
    def _raw(self, section, key, required):
        if not self.parser.has_section(section) or not self.parser.has_option(section, key):
            if required:
                raise ConfigError(f"{self.source.name}: missing key '{key}' in section [{section}]")
            return None
        return self.parser.get(section, key)

    def _fail(self, section, key, msg):
        raise ConfigError(f"{self.source.where(section, key)}: [{section}] {key}: {msg}")

    def get_str(self, section, key, default=None, required=False):
        raw = self._raw(section, key, required)
        return default if raw is None else raw.strip()

    def get_float(self, section, key, default=None, required=False):
        raw = self._raw(section, key, required)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            self._fail(section, key, f"expected a number, got {raw!r}")

    def get_int(self, section, key, default=None, required=False):
        raw = self._raw(section, key, required)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            self._fail(section, key, f"expected an integer, got {raw!r}")

    def get_list(self, section, key, default=None, required=False):
        raw = self._raw(section, key, required)
        return default if raw is None else raw.replace(",", " ").split()

    def get_floats(self, section, key, default=None, required=False):
        items = self.get_list(section, key, None, required)
        if items is None:
            return default
        try:
            return [float(v) for v in items]
        except ValueError:
            self._fail(section, key, f"expected numbers, got {items!r}")

    # -- model pieces ---------------------------------------------------
    @property
    def backend_name(self):
        name = self.get_str("mesh", "backend", required=True).lower()
        if name not in BACKENDS:
            self._fail("mesh", "backend", f"must be one of {BACKENDS}")
        return name

    def fluid(self):
        kwargs = {}
        if self.parser.has_section("fluid"):
            for key in self.parser.options("fluid"):
                if key not in _FLUID_FIELDS:
                    self._fail("fluid", key, "unknown fluid parameter")
                if key == "quadrature_points":
                    kwargs[key] = self.get_int("fluid", key)
                else:
                    kwargs[key] = self.get_float("fluid", key)
        try:
            return FluidModel(**kwargs)
        except InvalidParams as err:
            raise ConfigError(f"{self.source.where('fluid')}: [fluid] {err}") from err

    def _tensor(self, section, key, default):
        vals = self.get_floats(section, key)
        if vals is None:
            return default
        if len(vals) == 1:
            lam = vals[0] * np.eye(2)
        elif len(vals) == 3:
            lam = np.array([[vals[0], vals[1]], [vals[1], vals[2]]])
        else:
            self._fail(section, key, "expected 'k' or 'kxx kxy kyy'")
        if np.linalg.eigvalsh(lam)[0] <= 0:
            self._fail(section, key, "tensor must be symmetric positive definite")
        return lam

    def _porosity(self, section, default):
        phi = self.get_float(section, "porosity", default)
        if phi is not None and not 0 < phi <= 1:
            self._fail(section, "porosity", "must lie in (0, 1]")
        return phi

    def medium(self):
        """``(porosity(x, y), permeability(x, y))`` callables on cell centres."""
        phi0 = self._porosity("medium", 0.3)
        lam0 = self._tensor("medium", "permeability", np.eye(2))
        regions = []
        for sec in self.parser.sections():
            if sec.startswith("region:"):
                box = self.get_floats(sec, "box", required=True)
                if len(box) != 4:
                    self._fail(sec, "box", "expected 'x0 x1 y0 y1'")
                regions.append((box, self._porosity(sec, None), self._tensor(sec, "permeability", None)))

        def inside(box, x, y):
            return (x >= box[0]) & (x <= box[1]) & (y >= box[2]) & (y <= box[3])

        def porosity(x, y):
            out = np.full(np.shape(x), phi0)
            for box, phi, _ in regions:
                if phi is not None:
                    out[inside(box, x, y)] = phi
            return out

        def permeability(x, y):
            out = np.broadcast_to(lam0, np.shape(x) + (2, 2)).copy()
            for box, _, lam in regions:
                if lam is not None:
                    out[inside(box, x, y)] = lam
            return out

        return porosity, permeability

    def dirichlet(self):
        sides = self.get_list("mesh", "dirichlet", ["all"])
        try:
            return boundary_sides(*sides)
        except ValueError as err:
            self._fail("mesh", "dirichlet", str(err))

    def build_backend(self, backend=None, **overrides):
        """Mesh plus scheme. ``overrides`` replace ``[mesh]`` values (``distortion``, ``split``)."""
        name = (backend or self.backend_name).lower()
        if name not in BACKENDS:
            raise ConfigError(f"unknown backend {name!r}")
        fluid = self.fluid()
        porosity, permeability = self.medium()
        dt = self.get_float("time", "dt", required=True)
        if not dt > 0:
            self._fail("time", "dt", "must be positive")
        path = self.get_str("mesh", "file")
        try:
            if path:
                if not os.path.isabs(path) and os.path.exists(self.source.name):
                    path = os.path.join(os.path.dirname(self.source.name), path)
                mt = read_mesh(path)
                builder = build_from_polygons if name == "ddfv" else build_from_triangles
                mesh = builder(mt.vertices, mt.cells, mt.dirichlet_map(), permeability)
            else:
                nx = overrides.get("nx") or self.get_int("mesh", "nx", required=True)
                ny = overrides.get("ny") or self.get_int("mesh", "ny", required=True)
                distortion = overrides.get("distortion", self.get_float("mesh", "distortion", 0.0))
                seed = self.get_int("mesh", "seed", 0)
                if name == "ddfv":
                    mesh = build_structured(nx, ny, distortion, self.dirichlet(), permeability, seed)
                else:
                    split = overrides.get("split", self.get_str("mesh", "split", "diagonal"))
                    mesh = build_triangulation(nx, ny, self.dirichlet(), split, distortion, permeability, seed)
        except (InvalidMesh, OSError) as err:
            raise ConfigError(f"{self.source.where('mesh')}: [mesh] {err}") from err
        if name == "ddfv":
            centres = mesh.node_xy[: mesh.n_cells]
            return DdfvScheme(mesh, fluid, porosity(centres[:, 0], centres[:, 1]), dt)
        bary = mesh.vertices[mesh.triangles].mean(axis=1)
        return CvfeScheme(mesh, fluid, porosity(bary[:, 0], bary[:, 1]), dt)

    def t_final(self):
        t = self.get_float("time", "t_final", required=True)
        if t < 0:
            self._fail("time", "t_final", "must be non-negative")
        return t

    def solver_options(self):
        tol = self.get_float("solver", "tol", 1e-10)
        if not tol > 0:
            self._fail("solver", "tol", "must be positive")
        return {"tol": tol, "max_iter": self.get_int("solver", "max_iter", 50)}

    def max_refinements(self):
        return self.get_int("solver", "max_refinements", 5)

    def ladder(self):
        return default_ladder(eps0=self.get_float("solver", "eps0", 0.1),
                              eta0=self.get_float("solver", "eta0", 1e-2),
                              factor=self.get_float("solver", "factor", 4.0),
                              levels=self.get_int("solver", "levels", 9))

    def initial_state(self, backend):
        name = self.get_str("initial", "profile", "bump")
        if name not in PROFILES:
            self._fail("initial", "profile", f"unknown profile; choose from {sorted(PROFILES)}")
        params = {}
        if self.parser.has_section("initial"):
            for key in self.parser.options("initial"):
                if key not in ("profile", "p_w_level"):
                    params[key] = self.get_float("initial", key)
        try:
            return initial_state(backend, name, self.get_float("initial", "p_w_level", 0.0), **params)
        except TypeError as err:
            raise ConfigError(f"{self.source.where('initial')}: [initial] {err}") from err
        except InvalidParams as err:
            raise ConfigError(f"{self.source.where('initial')}: [initial] {err}") from err

    def output_dir(self, default="out"):
        return self.get_str("output", "directory", default)


def parse_config(text, name="<config>"):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=name)
    except configparser.Error as err:
        raise ConfigError(str(err)) from err
    return CaseConfig(parser, _Source(text, name))


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    return parse_config(text, str(path))

"""Command-line entry point: ``quarl {validate,solve,train,sample,fk}``.

A run is described by a flat configuration dictionary.  It is built from the
defaults, then an optional ``--config`` JSON file, then explicit flags.
Unknown keys are rejected.  Every run prints (or writes) a JSON document
holding ``schema``, the command, the fully resolved configuration and the
result.  Wall-clock information goes to a separate ``<output>.meta.json`` so
that results of identical runs are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
import zlib
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, InvalidLattice, NonStoquastic, QuarlError

SCHEMA = 1
U_DUMP_LIMIT = 1 << 14

DEFAULTS = {
    # model and lattice
    "model": "ising",
    "J": 1.0,
    "h": 1.0,
    "J_perp": None,
    "dims": [4],
    "periodic": True,
    # formulation
    "formulation": "infinite",
    "dt": 1e-4,
    "C": None,
    "terminals": None,
    # shared
    "seed": 0,
    "output": None,
    "checkpoint": None,
    # validate / solve
    "tol": 1e-12,
    "sector": None,
    "dump_u": None,
    # train
    "episodes": 4500,
    "lr": 1e-3,
    "lr_decay": 0.99,
    "lr_decay_interval": 10,
    "batch_size": 4096,
    "buffer_size": 65536,
    "target_update": 20,
    "validation_interval": 20,
    "channels": 64,
    "hidden_layers": 3,
    "validation": "auto",
    "log_csv": None,
    # sample
    "proposal": "uniform",
    "steps": 2000,
    "burn_in": None,
    "n_chains": 16,
    "series_csv": None,
    # fk
    "T": 1.0,
    "n_traj": 10000,
    "rates": "passive",
    "s0": None,
}

CHOICES = {
    "model": ("ising", "xxz"),
    "formulation": ("fk", "infinite", "terminal"),
    "rates": ("passive", "optimal", "checkpoint"),
    "validation": ("auto", "exact", "mc"),
}

INTEGER_KEYS = {
    "seed", "episodes", "lr_decay_interval", "batch_size", "buffer_size", "target_update",
    "validation_interval", "channels", "hidden_layers", "steps", "burn_in", "n_chains",
    "n_traj", "sector",
}
FLOAT_KEYS = {"J", "h", "J_perp", "dt", "C", "tol", "lr", "lr_decay", "T"}
PATH_KEYS = {"output", "checkpoint", "dump_u", "log_csv", "series_csv"}


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def _check_value(key, value):
    if value is None:
        return None
    if key in INTEGER_KEYS:
        try:
            ok = not isinstance(value, bool) and float(value).is_integer()
        except (TypeError, ValueError):
            ok = False
        if not ok:
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if key in FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        if not np.isfinite(value):
            raise ConfigError(f"{key}: must be finite")
        return float(value)
    if key in CHOICES:
        if value not in CHOICES[key]:
            raise ConfigError(f"{key}: must be one of {CHOICES[key]}, got {value!r}")
        return value
    if key == "periodic":
        if not isinstance(value, bool):
            raise ConfigError("periodic: expected true or false")
        return value
    if key == "dims":
        dims = [value] if isinstance(value, int) else list(value)
        if not dims or not all(isinstance(d, int) and not isinstance(d, bool) for d in dims):
            raise ConfigError(f"dims: expected a list of integers, got {value!r}")
        return dims
    if key == "terminals":
        return [str(t) for t in value]
    return str(value)


def resolve_config(file_config: dict | None, overrides: dict) -> dict:
    """Defaults, then the config file, then flags; every key validated."""
    config = dict(DEFAULTS)
    for source in (file_config or {}, overrides):
        unknown = sorted(set(source) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
        for key, value in source.items():
            config[key] = _check_value(key, value)
    return config


def load_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be an object")
    if "schema" in data and "config" in data:  # a previous result document
        data = data["config"]
    return data


def substream_seed(root: int, name: str) -> int:
    """Independent seed for a named consumer of randomness."""
    ss = np.random.SeedSequence([int(root) & 0xFFFFFFFF, zlib.crc32(name.encode())])
    return int(ss.generate_state(1, np.uint32)[0])


def build_model(config: dict):
    from .hamiltonian import IsingModel, XXZModel
    from .lattice import build_lattice

    try:
        lattice = build_lattice(config["dims"], config["periodic"])
        if config["model"] == "ising":
            return IsingModel(lattice, config["J"], config["h"])
        J_perp = config["J_perp"] if config["J_perp"] is not None else config["J"]
        return XXZModel(lattice, config["J"], J_perp)
    except (InvalidLattice, NonStoquastic) as exc:
        raise ConfigError(f"model: {exc}") from None


def build_formulation(config: dict):
    from .lattice import SpinConfig
    from .mdp import Formulation

    terminals = None
    if config["terminals"] is not None:
        terminals = tuple(SpinConfig.from_string(t).bits for t in config["terminals"])
    return Formulation(config["formulation"], dt=config["dt"], C=config["C"], terminals=terminals)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _sector_space(model, config):
    from .lattice import StateSpace

    return StateSpace(model.lattice, config["sector"])


def cmd_validate(config: dict) -> dict:
    from .exact import ground_state_dense

    model = build_model(config)
    gs = ground_state_dense(model, _sector_space(model, config), C=config["C"], tol=config["tol"])
    return {
        "E0": gs.energy,
        "residual": gs.residual,
        "iterations": gs.iterations,
        "n_states": len(gs.space),
        "shift": gs.shift,
    }


def cmd_solve(config: dict) -> dict:
    from .hamiltonian import hamiltonian_matrix
    from .lattice import SpinConfig
    from .mdp import solve_tabular

    model = build_model(config)
    formulation = build_formulation(config)
    space = _sector_space(model, config)
    if formulation.kind == "terminal":
        from .exact import ground_state_dense

        # the terminal reward needs an energy; take it from the oracle
        formulation = formulation.with_energy(ground_state_dense(model, space).energy)
    table = solve_tabular(formulation, model, space, tol=config["tol"])
    phi = table.wavefunction()
    H = hamiltonian_matrix(model, space)
    residual = float(np.max(np.abs(H @ phi - table.energy * phi)))
    result = {
        "E0": table.energy,
        "R_star": table.R_star,
        "residual": residual,
        "iterations": table.iterations,
        "n_states": len(space),
        "formulation": formulation.to_dict(),
    }
    if config["dump_u"]:
        if len(space) > U_DUMP_LIMIT:
            raise ConfigError(f"dump_u: sector has {len(space)} states, limit is {U_DUMP_LIMIT}")
        with open(config["dump_u"], "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["config", "U"])
            for b, u in zip(space.bits, table.U):
                writer.writerow([SpinConfig(int(b), model.n_sites).to_string(), repr(float(u))])
    return result


def _train_config(config: dict):
    from .neural import TrainConfig

    keys = [
        "episodes", "lr", "lr_decay", "lr_decay_interval", "batch_size", "buffer_size",
        "target_update", "validation_interval", "dt", "C", "channels", "hidden_layers", "validation",
    ]
    try:
        return TrainConfig(
            formulation=config["formulation"],
            seed=substream_seed(config["seed"], "train"),
            **{k: config[k] for k in keys},
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_train(config: dict) -> dict:
    from .neural import save_checkpoint, train_soft_q, write_training_log

    model = build_model(config)
    tc = _train_config(config)
    result = train_soft_q(tc, model)
    if config["checkpoint"]:
        save_checkpoint(
            config["checkpoint"], result.net, model, result.formulation,
            extra={"E0_estimate": result.E0_estimate},
        )
    if config["log_csv"]:
        write_training_log(config["log_csv"], result.log)
    return {
        "final_energy": result.final_energy,
        "E0_estimate": result.E0_estimate,
        "episodes": tc.episodes,
        "final_loss": result.log[-1]["loss"],
    }


def _load_trained(config: dict):
    from .mdp import Formulation
    from .neural import NeuralWavefunction, load_checkpoint, load_model

    if not config["checkpoint"]:
        raise ConfigError("checkpoint: required for this command")
    net, header = load_checkpoint(config["checkpoint"])
    model = load_model(header)
    if model is None:
        raise ConfigError("checkpoint: file carries no model description")
    f = header.get("formulation") or {"kind": "terminal"}
    formulation = Formulation(f["kind"], dt=f.get("dt", 1e-4), C=f.get("C"),
                              terminals=tuple(f["terminals"]) if f.get("terminals") else None)
    E0 = header.get("extra", {}).get("E0_estimate", model.min_potential_bound())
    return model, NeuralWavefunction(net, model, formulation, E0)


def cmd_sample(config: dict) -> dict:
    from .sampling import parse_proposal, variational_energy_mc

    model, wf = _load_trained(config)
    try:
        proposal = parse_proposal(config["proposal"])
    except ValueError as exc:
        raise ConfigError(f"proposal: {exc}") from None
    res = variational_energy_mc(
        model, wf, proposal, n_steps=config["steps"], burn_in=config["burn_in"],
        seed=substream_seed(config["seed"], "sample"), n_chains=config["n_chains"],
    )
    if config["series_csv"]:
        with open(config["series_csv"], "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "chain", "local_energy", "potential"])
            for step in range(res.local_energy.shape[0]):
                for chain in range(res.local_energy.shape[1]):
                    writer.writerow([step, chain, repr(float(res.local_energy[step, chain])),
                                     repr(float(res.potential[step, chain]))])
    return res.stats.to_dict()


def cmd_fk(config: dict) -> dict:
    from .exact import ground_state_dense, tabulated
    from .fk_sim import DoobRates, fk_estimate, fk_importance_estimate
    from .lattice import SpinConfig

    if config["rates"] == "checkpoint":
        model, wf = _load_trained(config)
    else:
        model = build_model(config)
    gs = ground_state_dense(model, _sector_space(model, config))
    phi0 = tabulated(gs.space, gs.amplitudes)
    if config["s0"] is None:
        s0 = int(gs.space.bits[-1])
    else:
        cfg = SpinConfig.from_string(config["s0"])
        if cfg.n_sites != model.n_sites:
            raise ConfigError(f"s0: expected {model.n_sites} characters")
        s0 = cfg.bits
    if config["T"] <= 0 or config["n_traj"] < 2:
        raise ConfigError("T must be positive and n_traj at least 2")
    seed = substream_seed(config["seed"], "fk")
    args = (s0, config["T"], phi0, config["n_traj"], seed, gs.energy)
    if config["rates"] == "passive":
        est = fk_estimate(model, *args)
    else:
        target = phi0 if config["rates"] == "optimal" else wf
        est = fk_importance_estimate(model, DoobRates(model, target), *args)
    out = est.to_dict()
    out["exact"] = float(phi0(np.array([s0]))[0])
    return out


COMMANDS = {
    "validate": cmd_validate,
    "solve": cmd_solve,
    "train": cmd_train,
    "sample": cmd_sample,
    "fk": cmd_fk,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", help="JSON file of configuration keys")
    p.add_argument("--model", choices=CHOICES["model"])
    p.add_argument("--J", type=float)
    p.add_argument("--h", type=float)
    p.add_argument("--J-perp", dest="J_perp", type=float)
    p.add_argument("--dims", type=int, nargs="+")
    p.add_argument("--periodic", dest="periodic", action="store_true", default=None)
    p.add_argument("--open", dest="periodic", action="store_false")
    p.add_argument("--seed", type=int)
    p.add_argument("--output", help="write the result JSON here instead of stdout")


def _add_formulation(p):
    p.add_argument("--formulation", choices=CHOICES["formulation"])
    p.add_argument("--dt", type=float)
    p.add_argument("--C", type=float)
    p.add_argument("--terminals", nargs="+", help="terminal configurations as +/- strings")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quarl", description="Ground states of stoquastic spin models by reinforcement learning.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="exact ground state by power iteration")
    _add_common(p)
    p.add_argument("--C", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--sector", type=int)

    p = sub.add_parser("solve", help="tabular soft Bellman solve")
    _add_common(p)
    _add_formulation(p)
    p.add_argument("--tol", type=float)
    p.add_argument("--sector", type=int)
    p.add_argument("--dump-u", dest="dump_u", help="CSV of per-state values")

    p = sub.add_parser("train", help="neural soft Q-learning")
    _add_common(p)
    _add_formulation(p)
    for name, typ in [("episodes", int), ("lr", float), ("lr-decay", float), ("lr-decay-interval", int),
                      ("batch-size", int), ("buffer-size", int), ("target-update", int),
                      ("validation-interval", int), ("channels", int), ("hidden-layers", int)]:
        p.add_argument(f"--{name}", dest=name.replace("-", "_"), type=typ)
    p.add_argument("--validation", choices=CHOICES["validation"])
    p.add_argument("--checkpoint", help="where to save the trained network")
    p.add_argument("--log-csv", dest="log_csv")

    p = sub.add_parser("sample", help="Metropolis-Hastings variational energy of a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--proposal", help="uniform, q1 or qk:<k>")
    p.add_argument("--steps", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--n-chains", dest="n_chains", type=int)
    p.add_argument("--series-csv", dest="series_csv")

    p = sub.add_parser("fk", help="Feynman-Kac Monte-Carlo estimate of phi0(s0)")
    _add_common(p)
    p.add_argument("--T", type=float)
    p.add_argument("--n-traj", dest="n_traj", type=int)
    p.add_argument("--rates", choices=CHOICES["rates"])
    p.add_argument("--checkpoint")
    p.add_argument("--s0", help="initial configuration as a +/- string")
    p.add_argument("--sector", type=int)
    return parser


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return repr(x)
    return x


def _emit(document: dict, path) -> None:
    text = json.dumps(_jsonable(document), sort_keys=True, indent=2) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _error(kind: str, message: str, code: int) -> int:
    doc = {"schema": SCHEMA, "error": {"type": kind, "message": message}}
    sys.stderr.write(json.dumps(doc, sort_keys=True) + "\n")
    return code


def run(argv=None) -> int:
    """Parse ``argv``, execute the subcommand and return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config") and v is not None}
    started = time.time()
    try:
        file_config = load_config_file(args.config) if args.config else None
        config = resolve_config(file_config, flags)
    except ConfigError as exc:
        return _error("ConfigError", str(exc), 2)
    try:
        result = COMMANDS[args.command](config)
    except ConfigError as exc:
        return _error("ConfigError", str(exc), 2)
    except (QuarlError, ValueError, OSError) as exc:
        return _error(type(exc).__name__, str(exc), 1)
    _emit({"schema": SCHEMA, "command": args.command, "config": config, "result": result}, config["output"])
    if config["output"]:
        meta = {
            "schema": SCHEMA,
            "started": started,
            "elapsed_seconds": time.time() - started,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "quarl": __version__,
        }
        Path(str(config["output"]) + ".meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

"""Command line front end: basis training, recovery, evaluation, serving.

Every subcommand resolves its settings in one fixed order: built-in defaults,
then the FACET_SEED environment variable (for the `seed` key only), then a
flat key=value config file given with --config, then explicit flags.  Unknown
config keys are rejected.  Each artifact-producing run writes the fully
resolved settings to `<primary output>.config`, and that sidecar is itself a
valid --config file for replaying the run.

Exit codes: 0 success, 2 usage or config problem, 3 input/output or format
problem, 4 oracle budget exhausted by the remote side.
"""

from __future__ import annotations

import argparse
import os
import re
import sys
import threading

from .basis import TrainConfig, load_basis, save_basis, train
from .bench import evaluate as run_evaluate
from .bench import write_report_csv
from .errors import (
    BudgetExhaustedError,
    ConfigError,
    DegenerateInputError,
    FormatError,
    GeometryError,
    ModeError,
    TransportError,
    UnknownIdentityError,
    UnsupportedVersionError,
)
from .image import load_image_dir, read_image, write_image
from .oracle import make_random_embedder, with_budget
from .recovery import RecoveryConfig, recover_multistart, write_trajectory_csv
from .wire import connect, serve

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_BUDGET = 4

NONLINEARITY_CHOICES = ("tanh", "linear")


def _internal_nonlinearity(name: str) -> str:
    return "none" if name == "linear" else name


# --- flat key=value settings -------------------------------------------------

def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _parse_optional_str(raw: str):
    return raw if raw != "" else None


_PARSERS = {
    "int": lambda raw: int(raw),
    "float": lambda raw: float(raw),
    "str": lambda raw: raw,
    "optional_str": _parse_optional_str,
    "bool": _parse_bool,
    "pairs": lambda raw: [p for p in raw.split(";") if p],
}


def _format_value(kind: str, value) -> str:
    if value is None:
        return ""
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return repr(float(value))
    if kind == "pairs":
        return ";".join(value)
    return str(value)


def _read_config_file(path, subcommand: str, schema: dict) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key == "subcommand":
            if raw != subcommand:
                raise ConfigError(
                    f"{path}: config is for subcommand {raw!r}, not {subcommand!r}")
            continue
        if key not in schema:
            raise ConfigError(f"{path}:{lineno}: unknown setting {key!r}")
        kind = schema[key][0]
        try:
            out[key] = _PARSERS[kind](raw)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return out


def _resolve(subcommand: str, schema: dict, flag_values: dict, config_path,
             required: tuple, env=os.environ) -> dict:
    values = {key: default for key, (_, default) in schema.items()}
    if "seed" in schema and env.get("FACET_SEED"):
        try:
            values["seed"] = int(env["FACET_SEED"])
        except ValueError as exc:
            raise ConfigError(f"FACET_SEED must be an integer: {exc}") from exc
    if config_path:
        values.update(_read_config_file(config_path, subcommand, schema))
    for key, value in flag_values.items():
        if value is not None:
            values[key] = value
    for key in required:
        if values.get(key) is None:
            flag = "--" + key.replace("_", "-")
            raise ConfigError(f"missing required setting {key!r} (flag {flag})")
    return values


def _write_sidecar(primary_output, subcommand: str, schema: dict, values: dict):
    lines = [f"subcommand={subcommand}"]
    for key in sorted(schema):
        lines.append(f"{key}={_format_value(schema[key][0], values[key])}")
    with open(f"{primary_output}.config", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# --- oracle construction ------------------------------------------------------

def build_oracle(spec: str, geometry):
    """Turn an oracle spec into a scoring object.

    Accepted forms: an http(s) URL for a served oracle, or
    local:random:<seed>[:<dim>][:linear|tanh] for an in-process embedder.
    """
    if spec.startswith(("http://", "https://")):
        return connect(spec)
    parts = spec.split(":")
    if len(parts) < 3 or parts[0] != "local":
        raise ConfigError(
            f"oracle spec {spec!r} is neither a URL nor local:<kind>:<seed>")
    if parts[1] != "random":
        raise ConfigError(f"unknown local oracle kind {parts[1]!r}")
    try:
        seed = int(parts[2])
    except ValueError as exc:
        raise ConfigError(f"oracle seed must be an integer: {parts[2]!r}") from exc
    dim = 64
    nonlinearity = "tanh"
    rest = list(parts[3:])
    if rest and re.fullmatch(r"\d+", rest[0]):
        dim = int(rest.pop(0))
    if rest and rest[0] in NONLINEARITY_CHOICES:
        nonlinearity = rest.pop(0)
    if rest:
        raise ConfigError(f"unrecognized oracle spec suffix {':'.join(rest)!r}")
    return make_random_embedder(seed=seed, geometry=geometry, dim=dim,
                                nonlinearity=_internal_nonlinearity(nonlinearity))


def _parse_geometry(text: str):
    match = re.fullmatch(r"(\d+)x(\d+)x(\d+)", text)
    if not match:
        raise ConfigError(f"geometry must look like WxHxC, got {text!r}")
    width, height, channels = (int(g) for g in match.groups())
    if min(width, height) < 1 or channels not in (1, 3):
        raise ConfigError(f"unsupported geometry {text!r}")
    return height, width, channels


def _load_named_targets(path):
    try:
        names = sorted(n for n in os.listdir(path)
                       if n.lower().endswith((".pgm", ".ppm")))
    except OSError:
        raise
    return [(os.path.splitext(n)[0], read_image(os.path.join(path, n)))
            for n in names]


# --- subcommand schemas ---------------------------------------------------

TRAIN_SCHEMA = {
    "data": ("str", None),
    "out": ("str", None),
    "out_loss": ("optional_str", None),
    "k": ("int", 64),
    "step_size": ("float", 0.1),
    "batch_size": ("int", 32),
    "epochs": ("int", 50),
    "seed": ("int", 0),
    "symmetry_on": ("bool", True),
    "generative_on": ("bool", True),
}
TRAIN_REQUIRED = ("data", "out")

RECOVER_SCHEMA = {
    "basis": ("str", None),
    "oracle": ("str", None),
    "id": ("str", None),
    "enroll_image": ("optional_str", None),
    "query_budget": ("int", 50_000),
    "restarts": ("int", 10),
    "restart_iters": ("int", 100),
    "batch_size": ("int", 16),
    "accept_mode": ("str", "monotone"),
    "sigma": ("float", 1.0),
    "seed": ("int", 0),
    "out_image": ("str", None),
    "out_trajectory": ("str", None),
}
RECOVER_REQUIRED = ("basis", "oracle", "id", "out_image", "out_trajectory")

EVALUATE_SCHEMA = {
    "targets": ("str", None),
    "basis": ("str", None),
    "out": ("str", None),
    "attacked_seed": ("int", 1),
    "critic_seed": ("int", 2),
    "embed_dim": ("int", 64),
    "nonlinearity": ("str", "tanh"),
    "query_budget": ("int", 50_000),
    "restarts": ("int", 10),
    "restart_iters": ("int", 100),
    "batch_size": ("int", 16),
    "accept_mode": ("str", "monotone"),
    "sigma": ("float", 1.0),
    "seed": ("int", 0),
}
EVALUATE_REQUIRED = ("targets", "basis", "out")

SERVE_SCHEMA = {
    "basis_geometry": ("str", None),
    "embedder": ("str", "random"),
    "seed": ("int", 0),
    "embed_dim": ("int", 64),
    "nonlinearity": ("str", "tanh"),
    "query_budget": ("int", 0),
    "bind": ("str", "127.0.0.1:0"),
    "enroll": ("pairs", []),
}
SERVE_REQUIRED = ("basis_geometry",)


# --- subcommand handlers ---------------------------------------------------

def _cmd_train_basis(args) -> int:
    flags = {key: getattr(args, key) for key in
             ("data", "out", "out_loss", "k", "step_size", "batch_size",
              "epochs", "seed")}
    flags["symmetry_on"] = False if args.no_symmetry else None
    flags["generative_on"] = False if args.no_generative else None
    values = _resolve("train-basis", TRAIN_SCHEMA, flags, args.config,
                      TRAIN_REQUIRED)
    if values["out_loss"] is None:
        values["out_loss"] = values["out"] + ".loss.csv"

    images = load_image_dir(values["data"])
    cfg = TrainConfig(
        k=values["k"], step_size=values["step_size"],
        batch_size=values["batch_size"], epochs=values["epochs"],
        seed=values["seed"], symmetry_on=values["symmetry_on"],
        generative_on=values["generative_on"],
    )
    losses = []
    basis = train(images, cfg,
                  epoch_callback=lambda epoch, mean: losses.append((epoch, mean)))
    save_basis(basis, values["out"])
    with open(values["out_loss"], "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for epoch, mean in losses:
            fh.write(f"{epoch},{mean!r}\n")
    _write_sidecar(values["out"], "train-basis", TRAIN_SCHEMA, values)
    print(f"trained mode={cfg.loss_mode} k={basis.k} images={len(images)} "
          f"final_loss={losses[-1][1]!r}")
    return EXIT_OK


def _cmd_recover(args) -> int:
    flags = {key: getattr(args, key) for key in RECOVER_SCHEMA}
    values = _resolve("recover", RECOVER_SCHEMA, flags, args.config,
                      RECOVER_REQUIRED)
    basis = load_basis(values["basis"])
    cfg = RecoveryConfig(
        batch_size=values["batch_size"], query_budget=values["query_budget"],
        sigma=values["sigma"], restarts=values["restarts"],
        restart_iters=values["restart_iters"], accept_mode=values["accept_mode"],
        seed=values["seed"],
    )
    cfg.validate()
    oracle = build_oracle(values["oracle"], basis.geometry)
    if values["enroll_image"] is not None:
        oracle.enroll(values["id"], read_image(values["enroll_image"]))
    result = recover_multistart(oracle, values["id"], basis, cfg)
    write_image(result.image, values["out_image"])
    write_trajectory_csv(result.trajectory, values["out_trajectory"])
    _write_sidecar(values["out_image"], "recover", RECOVER_SCHEMA, values)
    print(f"final_score={result.final_score!r} queries={result.total_queries} "
          f"exhausted={str(result.exhausted).lower()}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    flags = {key: getattr(args, key) for key in EVALUATE_SCHEMA}
    values = _resolve("evaluate", EVALUATE_SCHEMA, flags, args.config,
                      EVALUATE_REQUIRED)
    if values["nonlinearity"] not in NONLINEARITY_CHOICES:
        raise ConfigError(
            f"nonlinearity must be one of {NONLINEARITY_CHOICES}, "
            f"got {values['nonlinearity']!r}")
    basis = load_basis(values["basis"])
    targets = _load_named_targets(values["targets"])
    nonlinearity = _internal_nonlinearity(values["nonlinearity"])
    attacked = make_random_embedder(
        seed=values["attacked_seed"], geometry=basis.geometry,
        dim=values["embed_dim"], nonlinearity=nonlinearity)
    critic = make_random_embedder(
        seed=values["critic_seed"], geometry=basis.geometry,
        dim=values["embed_dim"], nonlinearity=nonlinearity)
    cfg = RecoveryConfig(
        batch_size=values["batch_size"], query_budget=values["query_budget"],
        sigma=values["sigma"], restarts=values["restarts"],
        restart_iters=values["restart_iters"], accept_mode=values["accept_mode"],
        seed=values["seed"],
    )
    cfg.validate()
    report = run_evaluate(targets, attacked, critic, basis, cfg)
    write_report_csv(report, values["out"])
    _write_sidecar(values["out"], "evaluate", EVALUATE_SCHEMA, values)
    print(f"targets={report.n_targets} "
          f"attacked_mean={report.attacked_mean!r} "
          f"critic_mean={report.critic_mean!r} "
          f"queries_mean={report.queries_mean!r}")
    return EXIT_OK


def _cmd_serve_oracle(args) -> int:
    flags = {key: getattr(args, key) for key in SERVE_SCHEMA}
    values = _resolve("serve-oracle", SERVE_SCHEMA, flags, args.config,
                      SERVE_REQUIRED)
    if values["embedder"] != "random":
        raise ConfigError(f"unknown embedder {values['embedder']!r}")
    if values["nonlinearity"] not in NONLINEARITY_CHOICES:
        raise ConfigError(
            f"nonlinearity must be one of {NONLINEARITY_CHOICES}, "
            f"got {values['nonlinearity']!r}")
    geometry = _parse_geometry(values["basis_geometry"])
    oracle = make_random_embedder(
        seed=values["seed"], geometry=geometry, dim=values["embed_dim"],
        nonlinearity=_internal_nonlinearity(values["nonlinearity"]))
    for pair in values["enroll"]:
        identity, sep, path = pair.partition("=")
        if not sep or not identity or not path:
            raise ConfigError(f"--enroll expects ID=FILE, got {pair!r}")
        oracle.enroll(identity, read_image(path))
    if values["query_budget"] > 0:
        oracle = with_budget(oracle, values["query_budget"])
    service = serve(oracle, values["bind"], geometry=geometry)
    print(f"serving {service.endpoint}", flush=True)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        service.close()
    return EXIT_OK


# --- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="facet",
        description="Recover enrolled faces from a black-box similarity oracle.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("train-basis", help="train an eigenface basis")
    p.add_argument("--data", help="directory of .pgm/.ppm training images")
    p.add_argument("--k", type=int, help="number of basis columns")
    p.add_argument("--out", help="output basis file")
    p.add_argument("--out-loss", help="training-loss CSV (default: OUT.loss.csv)")
    p.add_argument("--no-symmetry", action="store_true",
                   help="disable the symmetry term in the loss")
    p.add_argument("--no-generative", action="store_true",
                   help="disable the generative term in the loss")
    p.add_argument("--step-size", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="flat key=value settings file")
    p.set_defaults(handler=_cmd_train_basis)

    p = sub.add_parser("recover", help="reconstruct an enrolled identity")
    p.add_argument("--basis", help="trained basis file")
    p.add_argument("--oracle",
                   help="http(s) URL or local:random:<seed>[:<dim>][:linear|tanh]")
    p.add_argument("--id", help="identity to attack")
    p.add_argument("--enroll-image", dest="enroll_image",
                   help="enroll this image under --id before attacking")
    p.add_argument("--budget", dest="query_budget", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--restart-iters", dest="restart_iters", type=int)
    p.add_argument("--batch", dest="batch_size", type=int)
    p.add_argument("--accept", dest="accept_mode",
                   choices=["always", "monotone"])
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-image", dest="out_image")
    p.add_argument("--out-trajectory", dest="out_trajectory")
    p.add_argument("--config", help="flat key=value settings file")
    p.set_defaults(handler=_cmd_recover)

    p = sub.add_parser("evaluate", help="recover a target suite and report")
    p.add_argument("--targets", help="directory of target images")
    p.add_argument("--basis", help="trained basis file")
    p.add_argument("--out", help="report CSV path")
    p.add_argument("--attacked-seed", dest="attacked_seed", type=int)
    p.add_argument("--critic-seed", dest="critic_seed", type=int)
    p.add_argument("--dim", dest="embed_dim", type=int)
    p.add_argument("--nonlinearity", choices=list(NONLINEARITY_CHOICES))
    p.add_argument("--budget", dest="query_budget", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--restart-iters", dest="restart_iters", type=int)
    p.add_argument("--batch", dest="batch_size", type=int)
    p.add_argument("--accept", dest="accept_mode",
                   choices=["always", "monotone"])
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="flat key=value settings file")
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("serve-oracle", help="serve a scoring oracle over HTTP")
    p.add_argument("--basis-geometry", dest="basis_geometry",
                   help="image geometry as WxHxC, channels 1 or 3")
    p.add_argument("--embedder", choices=["random"])
    p.add_argument("--seed", type=int)
    p.add_argument("--dim", dest="embed_dim", type=int)
    p.add_argument("--nonlinearity", choices=list(NONLINEARITY_CHOICES))
    p.add_argument("--budget", dest="query_budget", type=int)
    p.add_argument("--bind", help="host:port, port 0 picks a free port")
    p.add_argument("--enroll", action="append",
                   help="ID=FILE, repeatable; enrolls before serving")
    p.add_argument("--config", help="flat key=value settings file")
    p.set_defaults(handler=_cmd_serve_oracle)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.handler(args)
    except BudgetExhaustedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ConfigError, ModeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, GeometryError, UnknownIdentityError,
            DegenerateInputError, UnsupportedVersionError, TransportError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

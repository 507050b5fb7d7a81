"""Operator command line: synth, build, query, eval, serve,
export-embeddings.

Exit codes: 0 success, 1 usage error, 2 data/validation error,
3 internal error. Every report echoes the seed that produced it.
"""

from __future__ import annotations

import json
import sys
import traceback
from pathlib import Path

import click

from .build import (
    build_database,
    load_sidecar,
    sidecar_path,
    write_build_report,
    write_sidecar,
)
from .config import Config, parse_config
from .core import Magnification
from .dataset import (
    SlideStore,
    SynthSpec,
    extract_patches,
    generate_synthetic,
    load_annotations,
    load_patch_table,
    renumber_patches,
    sample_balanced,
    save_annotations,
)
from .errors import DataError, SlideSearchError, ValidationError
from .evaluation import SweepPoint, chi_squared_2x2, evaluate_run, hit_counts
from .index.shards import build_shards, load_db, save_db
from .query import QueryEngine, QuerySpec, RegionSource
from .runner import run_random, run_retrieval


@click.group()
@click.option("--config", "config_path",
              type=click.Path(exists=True, dir_okay=False),
              help="Key-value config file; flags override it.")
@click.pass_context
def cli(ctx, config_path):
    ctx.obj = {"config_path": config_path}


def _config(ctx, **overrides) -> Config:
    path = ctx.obj.get("config_path") if ctx.obj else None
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if path:
        return parse_config(path, overrides)
    return Config(**overrides)


def _mags(text: str) -> list[Magnification]:
    try:
        return [Magnification[name.strip()]
                for name in text.split(",") if name.strip()]
    except KeyError as e:
        raise ValidationError(
            f"unknown magnification {e.args[0]!r}; expected "
            f"{[m.name for m in Magnification]}"
        ) from None


@cli.command()
@click.argument("spec_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True,
              type=click.Path(file_okay=False),
              help="Store root to create.")
def synth(spec_file, out_dir):
    """Generate synthetic slides and annotations from a JSON spec."""
    spec = SynthSpec.from_file(spec_file)
    store, annotations = generate_synthetic(spec, out_dir)
    save_annotations(Path(out_dir) / "annotations.json", annotations)
    click.echo(json.dumps({
        "seed": spec.seed,
        "root": str(out_dir),
        "slides": len(store.slides),
        "annotations": len(annotations),
        "classes": sorted({c.name for c in spec.classes}),
    }, sort_keys=True))


@cli.command()
@click.option("--store", "store_path", default=None,
              type=click.Path(exists=True, file_okay=False))
@click.option("--annotations", "annotations_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--mag", "mag_list", default="M40X",
              help="Comma-separated magnifications to extract.")
@click.option("--out", "db_out", default=None,
              help="Database file to write.")
@click.option("--side-px", default=300, show_default=True)
@click.option("--coverage", default=0.75, show_default=True)
@click.option("--per-class", default=None, type=int,
              help="Balanced subsample size per class.")
@click.option("--balance-axis", default="feature", show_default=True)
@click.option("--keep-unlabeled", is_flag=True,
              help="Keep unlabeled patches (serving databases).")
@click.option("--embedder", default=None)
@click.option("--threads", default=None, type=int)
@click.option("--seed", default=None, type=int)
@click.pass_context
def build(ctx, store_path, annotations_path, mag_list, db_out, side_px,
          coverage, per_class, balance_axis, keep_unlabeled, embedder,
          threads, seed):
    """Extract patches, embed all orientations, shard, and save."""
    cfg = _config(ctx, store_path=store_path,
                  annotations_path=annotations_path, db_path=db_out,
                  embedder=embedder, threads=threads, seed=seed)
    store = SlideStore.load(cfg.store_path)
    annotations = load_annotations(cfg.annotations)
    if not annotations:
        raise DataError(f"no annotations in {cfg.annotations}")
    patches = []
    for mag in _mags(mag_list):
        patches.extend(extract_patches(
            store, annotations, mag, side_px=side_px,
            coverage_threshold=coverage, keep_unlabeled=keep_unlabeled,
        ))
    patches = renumber_patches(patches)
    if per_class is not None:
        patches = sample_balanced(patches, per_class, balance_axis,
                                  seed=cfg.seed)
    shards = build_database(store, patches, embedder_name=cfg.embedder,
                            params=cfg.index_params(), threads=cfg.threads)
    db_path = Path(cfg.db_path)
    db_path.parent.mkdir(parents=True, exist_ok=True)
    save_db(shards, db_path)
    write_sidecar(db_path, patches)
    report = write_build_report(db_path, shards, patches, store,
                                seed=cfg.seed)
    click.echo(json.dumps({
        "db": str(db_path),
        "sidecar": str(sidecar_path(db_path)),
        "entries": report["entries"],
        "patches": report["patches"],
        "seed": cfg.seed,
    }, sort_keys=True))


@cli.command()
@click.option("--db", "db_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--store", "store_path", default=None,
              type=click.Path(exists=True, file_okay=False))
@click.option("--slide", "slide_id", required=True, type=int)
@click.option("--x", required=True, type=int)
@click.option("--y", required=True, type=int)
@click.option("--w", required=True, type=int)
@click.option("--h", required=True, type=int)
@click.option("--mag", required=True)
@click.option("--k", default=None, type=click.IntRange(min=1))
@click.option("--table", "as_table", is_flag=True,
              help="Human-readable table instead of JSON.")
@click.pass_context
def query(ctx, db_path, store_path, slide_id, x, y, w, h, mag, k,
          as_table):
    """Run one region query and print the ranked results."""
    cfg = _config(ctx, db_path=db_path, store_path=store_path)
    store = SlideStore.load(cfg.store_path)
    shards = load_db(cfg.db_path, cfg.index_params())
    engine = QueryEngine(shards, store=store, threads=cfg.threads)
    spec = QuerySpec(
        region=RegionSource(slide_id=slide_id, x=x, y=y, w=w, h=h,
                            mag=_mags(mag)[0]),
        k=k or cfg.k,
        oversample_factor=cfg.oversample,
        min_separation_px=cfg.min_separation_px,
    )
    outcome = engine.query(spec)
    docs = [r.to_json() for r in outcome.results]
    if as_table:
        click.echo(f"{'rank':>4} {'patch':>8} {'slide':>6} {'mag':>5} "
                   f"{'x':>8} {'y':>8} {'orient':>6} {'distance':>12}")
        for d in docs:
            click.echo(f"{d['rank']:>4} {d['patch_id']:>8} "
                       f"{d['slide_id']:>6} {d['magnification']:>5} "
                       f"{d['x']:>8} {d['y']:>8} "
                       f"{d['best_orientation']:>6} {d['distance']:>12.6g}")
        if outcome.exhausted:
            click.echo("(exhausted: fewer results than requested)")
    else:
        click.echo(json.dumps({"results": docs,
                               "exhausted": outcome.exhausted},
                              sort_keys=True))


@cli.command("eval")
@click.option("--db", "db_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--store", "store_path", default=None,
              type=click.Path(exists=True, file_okay=False))
@click.option("--queries", "queries_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Query patch table (newline-delimited JSON).")
@click.option("--axis", default="feature", show_default=True)
@click.option("--k", default=None, type=click.IntRange(min=1))
@click.option("--mode", default="lenient", show_default=True,
              type=click.Choice(["lenient", "strict"]))
@click.option("--random-baseline", is_flag=True,
              help="Also run the uniform-random arm and test against it.")
@click.option("--sweep-db-sizes", default=None,
              help="Comma-separated database sizes to sweep.")
@click.option("--sweep-ks", default=None,
              help="Comma-separated k values to sweep.")
@click.option("--out-prefix", default=None,
              help="Write <prefix>.json/.csv/.tsv reports.")
@click.option("--seed", default=None, type=int)
@click.pass_context
def eval_cmd(ctx, db_path, store_path, queries_path, axis, k, mode,
             random_baseline, sweep_db_sizes, sweep_ks, out_prefix, seed):
    """Evaluate retrieval quality over a query patch set."""
    cfg = _config(ctx, db_path=db_path, store_path=store_path, seed=seed)
    k = k or cfg.k
    store = SlideStore.load(cfg.store_path)
    shards = load_db(cfg.db_path, cfg.index_params())
    db_patches = load_sidecar(cfg.db_path)
    if not db_patches:
        raise DataError(f"no label sidecar next to {cfg.db_path}")
    engine = QueryEngine(shards, store=store, threads=cfg.threads)
    query_patches = load_patch_table(queries_path)
    if not query_patches:
        raise DataError(f"no query patches in {queries_path}")

    classes = sorted({
        c for p in query_patches
        for c in (sorted(p.labels.histologic_features)[:1]
                  if axis == "feature" else [])
    }) or None
    if axis == "gleason":
        classes = sorted({p.labels.gleason.value for p in query_patches
                          if p.labels.gleason})

    run = run_retrieval(engine, store, query_patches, db_patches, k=k,
                        min_separation_px=cfg.min_separation_px,
                        oversample_factor=cfg.oversample)
    report = evaluate_run(run, k=k, axis=axis, mode=mode, classes=classes)
    report.config["seed"] = cfg.seed

    if random_baseline:
        rand = run_random(shards, query_patches, db_patches, k=k,
                          seed=cfg.seed,
                          min_separation_px=cfg.min_separation_px)
        e_hits, e_total = hit_counts(run, k=k, axis=axis, mode=mode)
        r_hits, r_total = hit_counts(rand, k=k, axis=axis, mode=mode)
        test = chi_squared_2x2(e_hits, e_total, r_hits, r_total)
        report.tests.append(test)
        rand_report = evaluate_run(rand, k=k, axis=axis, mode=mode)
        report.config["random_baseline"] = {
            "top_k": rand_report.top_k_scores[k],
            "mean_match": rand_report.mean_match,
            "seed": cfg.seed,
        }

    sweeps = _run_sweeps(cfg, shards, engine, store, query_patches,
                         db_patches, axis, mode, k,
                         sweep_db_sizes, sweep_ks)
    doc = {"report": report.to_json(), "sweeps": sweeps, "seed": cfg.seed}
    click.echo(json.dumps(_summary_line(report, k), sort_keys=True))
    if out_prefix:
        prefix = Path(out_prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        with open(f"{prefix}.json", "w") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
        if report.confusion is not None:
            Path(f"{prefix}.confusion.csv").write_text(
                report.confusion_csv())
        Path(f"{prefix}.curve.tsv").write_text(report.curve_tsv())
        if sweeps:
            Path(f"{prefix}.sweep.tsv").write_text(_sweep_tsv(sweeps))


def _sweep_tsv(sweeps: list) -> str:
    """One gnuplot-ready row per grid point."""
    lines = ["magnification\tdb_size\tk\ttop_k\tmean_match\trank_weighted"]
    for entry in sweeps:
        point = entry["point"]
        rep = entry["report"]
        k = point["k"]
        lines.append("\t".join([
            str(point["magnification"] or "-"),
            str(point["db_size"] or "-"),
            str(k),
            f"{rep['top_k_scores'][str(k)]:.6f}",
            f"{rep['mean_match']:.6f}",
            f"{rep['rank_weighted']:.6f}",
        ]))
    return "\n".join(lines) + "\n"


def _summary_line(report, k) -> dict:
    out = {
        "top_k": report.top_k_scores[k],
        "mean_match": report.mean_match,
        "rank_weighted": report.rank_weighted,
        "seed": report.config.get("seed"),
    }
    if report.tests:
        out["chi_squared_p"] = report.tests[-1].p_value
    return out


def _run_sweeps(cfg, shards, engine, store, query_patches, db_patches,
                axis, mode, k, sweep_db_sizes, sweep_ks) -> list:
    from .evaluation import sweep as run_sweep

    points = []
    if sweep_ks:
        points.extend(SweepPoint(k=int(v))
                      for v in sweep_ks.split(",") if v.strip())
    if sweep_db_sizes:
        points.extend(SweepPoint(db_size=int(v), k=k)
                      for v in sweep_db_sizes.split(",") if v.strip())
    if not points:
        return []

    all_db_patches = sorted(db_patches.values(), key=lambda p: p.patch_id)
    n_classes = len({
        sorted(p.labels.histologic_features)[0]
        for p in all_db_patches if p.labels.histologic_features
    }) or 1

    def builder(point: SweepPoint):
        eng = engine
        if point.db_size is not None:
            per_class = max(1, point.db_size // n_classes)
            subset = sample_balanced(all_db_patches, per_class, "feature",
                                     seed=cfg.seed)
            ids = {p.patch_id for p in subset}
            keep = [i for i in range(len(shards.table))
                    if int(shards.table.patch_id[i]) in ids]
            sub_shards = build_shards(shards.table.take(keep),
                                      shards.info.embedder_name,
                                      cfg.index_params())
            eng = QueryEngine(sub_shards, store=store, threads=cfg.threads)
        return run_retrieval(eng, store, query_patches, db_patches,
                             k=point.k,
                             min_separation_px=cfg.min_separation_px)

    out = []
    for point, report in run_sweep(points, builder, axis=axis, mode=mode):
        out.append({"point": point.to_json(), "report": report.to_json()})
    return out


@cli.command()
@click.option("--db", "db_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--store", "store_path", default=None,
              type=click.Path(exists=True, file_okay=False))
@click.pass_context
def serve(ctx, db_path, store_path):
    """Start the HTTP service (config file recommended)."""
    import uvicorn

    from .service import create_app

    cfg = _config(ctx, db_path=db_path, store_path=store_path)
    store = SlideStore.load(cfg.store_path)
    shards = load_db(cfg.db_path, cfg.index_params())
    labels = load_sidecar(cfg.db_path)
    journal = Path(cfg.reports_dir) / "study_journal.ndjson"
    app = create_app(store, shards, labels_by_id=labels,
                     journal_path=journal, threads=cfg.threads,
                     bearer_token=cfg.bearer_token,
                     study_fraction=cfg.study_fraction,
                     frontend_dir=cfg.frontend_dir or None)
    host, port = cfg.listen_host_port()
    uvicorn.run(app, host=host, port=port, log_level="info")


@cli.command("export-embeddings")
@click.option("--db", "db_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True)
@click.pass_context
def export_embeddings(ctx, db_path, out_path):
    """Dump entries as TSV (metadata + labels + embedding columns)."""
    cfg = _config(ctx, db_path=db_path)
    shards = load_db(cfg.db_path, cfg.index_params())
    labels = load_sidecar(cfg.db_path)
    t = shards.table
    with open(out_path, "w") as f:
        head = ["patch_id", "orientation", "slide_id", "mag", "x", "y",
                "side_px", "features", "organ", "gleason"]
        head += [f"e{i}" for i in range(t.dim)]
        f.write("\t".join(head) + "\n")
        from .core import MAG_FROM_CODE, Orientation
        for i in range(len(t)):
            pid = int(t.patch_id[i])
            rec = labels.get(pid)
            feats = "|".join(sorted(rec.labels.histologic_features)) \
                if rec else ""
            organ = (rec.labels.organ or "") if rec else ""
            gleason = (rec.labels.gleason.value
                       if rec and rec.labels.gleason else "")
            row = [
                str(pid),
                Orientation(int(t.orientation[i])).name,
                str(int(t.slide_id[i])),
                MAG_FROM_CODE[int(t.mag[i])].name,
                str(int(t.x[i])), str(int(t.y[i])),
                str(int(t.side[i])),
                feats, organ, gleason,
            ]
            row += [repr(float(v)) for v in t.vecs[i]]
            f.write("\t".join(row) + "\n")
    click.echo(json.dumps({"rows": len(t), "out": out_path},
                          sort_keys=True))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as e:
        return int(e.exit_code)
    except click.exceptions.UsageError as e:
        e.show(file=sys.stderr)
        return 1
    except click.exceptions.ClickException as e:
        e.show(file=sys.stderr)
        return 1
    except (SlideSearchError,) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 3


if __name__ == "__main__":
    sys.exit(main())

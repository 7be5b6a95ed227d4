# lmm.py
"""
Interface en ligne de commande : remise en forme des données, ajustement des
modèles mixtes, comparaisons, contrastes, diagnostics, simulation et rapport.

Codes de sortie : 0 succès, 2 erreur d'usage, 3 erreur de données,
4 échec numérique.
"""
import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import pandas as pd

from utils.config import (
    DATABASE_URL, DEFAULT_LAYOUT, DEFAULT_SD_INTERCEPT, DEFAULT_SD_RESID, DEFAULT_SEED,
    DEFAULT_WEEKS, FIRST_WEEK, LAST_WEEK, LOG_FORMAT, LOG_LEVEL, MAIN_SET, MODEL_FORMULAS,
    OUTPUT_DIR, STRUCTURE_LABELS
)
from utils.covstruct import STRUCTURE_TOKENS, RandomInterceptSlope, initial_structure
from utils.data_loader import group_week_means, read_dataset, save_table, write_long
from utils.database import get_all_fits, init_db, log_fit
from utils.diagnostics import diagnostics_bundle, residual_table, summarize_residuals
from utils.engine import (
    Method, fit, fit_main_set, fit_sensitivity, refit_reml, spec_for, to_document
)
from utils.errors import EXIT_NUMERICAL, EXIT_OK, LmmError, UsageError, exit_code_for
from utils.inference import (
    compare_table, coefficient_table, display_frame, fixed_effects_across_models, gains,
    gains_frame, lrt, lrt_frame, model_trajectories, results_frame, sensitivity_gains,
    variance_components, weekly_differences
)
from utils.oracle import SimLayout, TruthParams, coverage_experiment, default_truth, equivalence_suite, simulate
from utils.report import emit_report


def _outdir(args) -> Path:
    path = Path(args.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_table(frame: pd.DataFrame, args, name: str, rounded: bool = True) -> Path:
    path = _outdir(args) / name
    save_table(display_frame(frame) if rounded else frame, str(path))
    return path


def _spec(args):
    return spec_for(args.model, args.structure, Method.parse(args.method),
                    uncorrelated=getattr(args, "uncorrelated", False))


def _weeks(args) -> range:
    if args.first_week >= args.last_week:
        raise UsageError(f"Semaines invalides: {args.first_week}..{args.last_week}")
    return range(args.first_week, args.last_week + 1)


# --- Sous-commandes ---

def cmd_reshape(args) -> None:
    data = read_dataset(args.input)
    output = args.output or str(_outdir(args) / "data_long.csv")
    write_long(data, output)


def cmd_eda(args) -> None:
    means = group_week_means(read_dataset(args.input))
    _write_table(means.frame, args, "eda_means.csv")


def cmd_fit(args) -> None:
    data = read_dataset(args.input)
    model = fit(_spec(args), data)
    document = to_document(model)
    text = json.dumps(document, indent=2, ensure_ascii=False)
    name = f"fit_{args.model if args.model in MODEL_FORMULAS else 'custom'}_{args.structure}_{args.method.lower()}.json"
    path = _outdir(args) / name
    path.write_text(text + "\n", encoding="utf-8")
    logging.info(f"Modèle écrit: {path}")
    print(text)
    if not args.no_record:
        init_db(args.database_url)
        log_fit(document, source=args.input)


def cmd_compare(args) -> None:
    data = read_dataset(args.input)
    method = Method.parse(args.method)
    if args.set == "main":
        fits = fit_main_set(data, args.structure, method)
        _write_table(compare_table(fits), args, "compare_main.csv")
        if method is Method.ML:
            by_name = dict(zip(MAIN_SET, fits))
            tests = [lrt(by_name["m1"], by_name["m3"]), lrt(by_name["m3"], by_name["m2"])]
            _write_table(lrt_frame(tests), args, "lrt_main.csv")
    else:
        fits = fit_sensitivity(_spec(args).fixed, data, method, name=args.model)
        labels = [STRUCTURE_LABELS[m.spec.structure] for m in fits]
        _write_table(compare_table(fits, labels), args, "compare_sensitivity.csv")
        _write_table(fixed_effects_across_models(fits), args, "fixed_effects_sensitivity.csv")


def cmd_contrasts(args) -> None:
    model = fit(_spec(args), read_dataset(args.input))
    _write_table(results_frame(weekly_differences(model, _weeks(args))), args, "weekly_differences.csv")


def cmd_gains(args) -> None:
    model = fit(_spec(args), read_dataset(args.input))
    _write_table(gains_frame(gains(model, args.first_week, args.last_week)), args, "gains.csv")


def cmd_diagnose(args) -> None:
    model = fit(_spec(args), read_dataset(args.input))
    for name, frame in diagnostics_bundle(model).items():
        _write_table(frame, args, name, rounded=False)


def _counts(args) -> List[int]:
    return list(args.layout) if args.layout else list(DEFAULT_LAYOUT.values())


def _truth_from_args(args) -> TruthParams:
    groups = list(range(1, len(_counts(args)) + 1))
    structure = initial_structure(args.structure, args.sd_intercept, args.sd_resid, groups)
    if args.structure == "ris":
        structure = RandomInterceptSlope.from_sds(args.sd_intercept, args.sd_slope, args.corr, args.sd_resid)
    elif args.structure == "ri+ar1":
        structure = replace(structure, phi=args.phi)
    elif args.structure == "ri+hv":
        ratios = tuple(args.ratios) if args.ratios else structure.ratios
        if len(ratios) != len(structure.groups):
            raise UsageError(f"{len(structure.groups)} rapports d'écart-type attendus")
        structure = replace(structure, ratios=ratios)
    return default_truth(structure)


def _layout(args, seed: int) -> SimLayout:
    return SimLayout(group_sizes=dict(enumerate(_counts(args), start=1)), weeks=args.weeks, seed=seed)


def cmd_simulate(args) -> None:
    truth = _truth_from_args(args)
    data = simulate(truth, _layout(args, args.seed))
    output = args.output or str(_outdir(args) / "simulated_long.csv")
    write_long(data, output)


def cmd_oracle_check(args) -> Optional[int]:
    table = equivalence_suite(args.seed, args.draws)
    _write_table(table, args, "oracle_check.csv", rounded=False)
    if not table["passed"].all():
        logging.error("Écart moteur/oracle détecté")
        return EXIT_NUMERICAL
    return None


def cmd_coverage(args) -> None:
    truth = _truth_from_args(args)
    table = coverage_experiment(truth, _layout(args, args.seed), args.reps,
                                method=Method.parse(args.method))
    _write_table(table, args, "coverage.csv")


def cmd_report(args) -> None:
    """Chaîne complète : modèles 1 à 3, tests, modèle 3, REML, sensibilité, contrastes, diagnostics."""
    data = read_dataset(args.input)
    main = fit_main_set(data)
    by_name = dict(zip(MAIN_SET, main))
    chosen = by_name["m3"]
    reml = refit_reml(chosen)
    sensitivity = fit_sensitivity(chosen.spec.fixed, data, name="m3")
    residuals = residual_table(chosen)

    tables = {
        "compare_main": compare_table(main),
        "lrt": lrt_frame([lrt(by_name["m1"], chosen), lrt(chosen, by_name["m2"])]),
        "coefficients": coefficient_table(chosen),
        "variance": variance_components(chosen),
        "reml": fixed_effects_across_models([chosen, reml], labels=["ML", "REML"]),
        "compare_sensitivity": compare_table(sensitivity, [STRUCTURE_LABELS[m.spec.structure] for m in sensitivity]),
        "weekly": results_frame(weekly_differences(chosen)),
        "gains": gains_frame(gains(chosen)),
        "diagnostics": summarize_residuals(residuals),
    }
    files = {
        "compare_main.csv": tables["compare_main"],
        "lrt_main.csv": tables["lrt"],
        "coefficients_m3.csv": tables["coefficients"],
        "compare_sensitivity.csv": tables["compare_sensitivity"],
        "fixed_effects_sensitivity.csv": fixed_effects_across_models(sensitivity),
        "gains_sensitivity.csv": sensitivity_gains(sensitivity),
        "weekly_differences.csv": tables["weekly"],
        "gains.csv": tables["gains"],
        "trajectories.csv": model_trajectories(chosen),
    }
    for name, frame in files.items():
        _write_table(frame, args, name)
    for name, frame in diagnostics_bundle(chosen).items():
        _write_table(frame, args, name, rounded=False)
    emit_report(main + [reml] + sensitivity[1:], tables, _outdir(args))


def cmd_history(args) -> None:
    init_db(args.database_url)
    fits = get_all_fits(args.limit)
    frame = pd.DataFrame(fits)
    print(NO_HISTORY if frame.empty else frame.to_string(index=False))


NO_HISTORY = "Aucun ajustement enregistré."


# --- Analyseur d'arguments ---

def _csv_numbers(cast):
    def parse(text: str) -> List:
        try:
            return [cast(part) for part in text.split(",") if part.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"Liste de nombres invalide: '{text}'")
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output-dir", default=OUTPUT_DIR,
                        help=f"Répertoire de sortie (par défaut: {OUTPUT_DIR}, variable LMM_OUTPUT_DIR)")
    common.add_argument("--log-level", default=LOG_LEVEL, help="Niveau de journalisation (INFO, DEBUG...)")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--model", default="m3",
                       help="Modèle prédéfini (m1, m2, m3) ou formule, ex. 'weight ~ tw * grp'")
    model.add_argument("--structure", default="ri", choices=STRUCTURE_TOKENS, help="Structure de covariance")
    model.add_argument("--method", default="ml", choices=["ml", "reml"], type=str.lower,
                       help="Critère d'estimation")
    model.add_argument("--uncorrelated", action="store_true",
                       help="Structure ris sans corrélation ordonnée/pente")

    weeks = argparse.ArgumentParser(add_help=False)
    weeks.add_argument("--first-week", type=int, default=FIRST_WEEK)
    weeks.add_argument("--last-week", type=int, default=LAST_WEEK)

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--seed", type=int, default=DEFAULT_SEED)
    sim.add_argument("--layout", type=_csv_numbers(int), default=None,
                     help="Nombre de souris par groupe, ex. 10,10,11")
    sim.add_argument("--weeks", type=int, default=DEFAULT_WEEKS)
    sim.add_argument("--structure", default="ri", choices=STRUCTURE_TOKENS)
    sim.add_argument("--sd-intercept", type=float, default=DEFAULT_SD_INTERCEPT)
    sim.add_argument("--sd-resid", type=float, default=DEFAULT_SD_RESID)
    sim.add_argument("--sd-slope", type=float, default=0.1 * DEFAULT_SD_INTERCEPT)
    sim.add_argument("--corr", type=float, default=0.0)
    sim.add_argument("--phi", type=float, default=0.0)
    sim.add_argument("--ratios", type=_csv_numbers(float), default=None,
                     help="Rapports d'écart-type résiduel des groupes 2..G")

    parser = argparse.ArgumentParser(description="Modèles linéaires mixtes pour données longitudinales de poids")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, handler, parents, help_text, with_input=True):
        command = sub.add_parser(name, parents=[common] + parents, help=help_text)
        if with_input:
            command.add_argument("input", help="Fichier large (bw1..bwW) ou long (mouseid,grp,tw,weight)")
        command.set_defaults(handler=handler)
        return command

    reshape = add("reshape", cmd_reshape, [], "Passage du format large au format long")
    reshape.add_argument("--output", default=None)
    add("eda", cmd_eda, [], "Moyennes observées par groupe et semaine")
    fit_cmd = add("fit", cmd_fit, [model], "Ajuste un modèle et écrit son document JSON")
    fit_cmd.add_argument("--no-record", action="store_true", help="Ne pas consigner dans le registre")
    fit_cmd.add_argument("--database-url", default=DATABASE_URL)
    compare = add("compare", cmd_compare, [model], "Tableau de comparaison AIC/BIC/logLik")
    compare.add_argument("--set", choices=["main", "sensitivity"], default="main")
    add("contrasts", cmd_contrasts, [model, weeks], "Différences hebdomadaires entre groupes")
    add("gains", cmd_gains, [model, weeks], "Gains de poids sur l'étude")
    add("diagnose", cmd_diagnose, [model], "Fichiers de diagnostic (résidus, BLUP, Q–Q)")
    simulate_cmd = add("simulate", cmd_simulate, [sim], "Simule un jeu de données long", with_input=False)
    simulate_cmd.add_argument("--output", default=None)
    oracle = add("oracle-check", cmd_oracle_check, [], "Équivalence moteur / oracle dense", with_input=False)
    oracle.add_argument("--seed", type=int, default=DEFAULT_SEED)
    oracle.add_argument("--draws", type=int, default=25)
    coverage = add("coverage", cmd_coverage, [sim], "Couverture empirique des IC à 95 %", with_input=False)
    coverage.add_argument("--reps", type=int, default=500)
    coverage.add_argument("--method", default="reml", choices=["ml", "reml"], type=str.lower)
    add("report", cmd_report, [], "Chaîne d'analyse complète et rapport markdown")
    history = add("history", cmd_history, [], "Derniers ajustements du registre", with_input=False)
    history.add_argument("--limit", type=int, default=20)
    history.add_argument("--database-url", default=DATABASE_URL)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """Exécute une sous-commande et renvoie le code de sortie."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(level=str(args.log_level).upper(), format=LOG_FORMAT, stream=sys.stderr)
    try:
        status = args.handler(args)
    except (LmmError, OSError) as e:
        logging.error(f"{type(e).__name__}: {e}")
        return exit_code_for(e)
    return EXIT_OK if status is None else status


if __name__ == "__main__":
    sys.exit(run())

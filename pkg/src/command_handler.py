# src/command_handler.py

import argparse  # 导入argparse库，用于处理命令行参数解析
import os

import numpy as np
import pandas as pd

import evaluation
from bagdata import (
    SCENARIOS, bag_size_summary, load_bag_file, save_bag_file, stratified_holdout, subsample_scenario,
    synth_generate,
)
from checkpoint import load_checkpoint, save_checkpoint
from config import Config
from logger import LOG  # 导入日志模块
from manifest_manager import MANIFEST_FILE, ManifestManager, RunManifest, describe_version
from network import init_model
from report_generator import ReportGenerator, write_csv
from seeding import derive_seed
from training import predict, train


# ---------------------------------------------------------------------------
# 参数类型校验，失败时 argparse 以退出码 2 报告用法错误
# ---------------------------------------------------------------------------

def positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def non_negative_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be a non-negative integer, got {text}")
    return value


def non_negative_float(text):
    value = float(text)
    if not value >= 0.0:
        raise argparse.ArgumentTypeError(f"must be a non-negative number, got {text}")
    return value


def unit_interval(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return value


def m_star_value(text):
    return "auto" if text == "auto" else positive_int(text)


def int_list(text):
    try:
        values = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text}") from None
    if not values or min(values) < 0:
        raise argparse.ArgumentTypeError(f"expected comma-separated non-negative integers, got {text}")
    return values


def replay_argv(argv, out_dir):
    """去掉 --config 与 --out，再显式追加解析后的输出目录，得到可以原样重放的命令行。"""
    replay, skip = [], False
    for token in argv:
        if skip:
            skip = False
            continue
        if token in ("--config", "--out"):
            skip = True
            continue
        if token.startswith("--config=") or token.startswith("--out="):
            continue
        replay.append(token)
    return replay + ["--out", out_dir]


class CommandHandler:
    def __init__(self, config=None):
        # 初始化CommandHandler，config 为空时按 --config / BAGSENTINEL_CONFIG 加载
        self.config = config
        self.parser = self.create_parser()  # 创建命令行解析器

    def _defaults(self):
        return self.config if self.config is not None else Config.from_dict({})

    def create_parser(self):
        # 创建并配置命令行解析器，帮助信息中的默认值来自当前配置
        defaults = self._defaults()
        synth, model, trn, ev = (defaults.sections[name] for name in ("synth", "model", "train", "eval"))

        common = argparse.ArgumentParser(add_help=False)
        common.add_argument('--config', type=str, default=None,
                            help='Config file (default: $BAGSENTINEL_CONFIG or ./config.json)')
        common.add_argument('--out', type=str, default=None,
                            help=f'Output directory (default: $BAGSENTINEL_OUTPUT_DIR or config output.dir, {defaults.output_dir})')

        seeded = argparse.ArgumentParser(add_help=False)
        seeded.add_argument('--seed', type=non_negative_int, default=None,
                            help=f'Master seed for folds, initialization and shuffling (default: {ev["seed"]})')

        architecture = argparse.ArgumentParser(add_help=False)
        architecture.add_argument('--blocks', dest='n_blocks', type=positive_int, default=None,
                                  help=f'Number of residual blocks (default: {model["n_blocks"]})')
        architecture.add_argument('--attn-hidden', dest='attn_hidden', type=positive_int, default=None,
                                  help=f'Hidden width of the attention scorer (default: {model["attn_hidden"]})')
        architecture.add_argument('--dropout', dest='dropout_rate', type=unit_interval, default=None,
                                  help=f'Dropout rate (default: {model["dropout_rate"]})')

        capacity = argparse.ArgumentParser(add_help=False)
        capacity.add_argument('--mstar', dest='m_star', type=m_star_value, default=None,
                              help=f'Instance capacity m*, or "auto" for the largest bag size (default: {model["m_star"]})')

        variant = argparse.ArgumentParser(add_help=False)
        variant.add_argument('--no-skip', dest='use_skip', action='store_const', const=False, default=None,
                             help=f'Disable skip connections (default: use_skip={model["use_skip"]})')
        variant.add_argument('--dense-attention', dest='use_sparse', action='store_const', const=False, default=None,
                             help=f'Use softmax instead of sparsemax (default: use_sparse={model["use_sparse"]})')

        fitting = argparse.ArgumentParser(add_help=False)
        fitting.add_argument('--epochs', type=positive_int, default=None,
                             help=f'Training epochs (default: {trn["epochs"]})')
        fitting.add_argument('--batch-size', dest='batch_size', type=positive_int, default=None,
                             help=f'Mini-batch size (default: {trn["batch_size"]})')
        fitting.add_argument('--lr', dest='learning_rate', type=non_negative_float, default=None,
                             help=f'Adam learning rate (default: {trn["learning_rate"]})')
        fitting.add_argument('--selection-metric', dest='selection_metric', choices=['val_auc', 'train_loss'],
                             default=None, help=f'Best-epoch criterion (default: {trn["selection_metric"]})')
        fitting.add_argument('--val-frac', dest='validation_fraction', type=unit_interval, default=None,
                             help=f'Validation slice of each training split (default: {ev["validation_fraction"]})')

        protocol = argparse.ArgumentParser(add_help=False)
        protocol.add_argument('--k', type=positive_int, default=None,
                              help=f'Number of cross-validation folds (default: {ev["k"]})')
        protocol.add_argument('--jobs', type=positive_int, default=None,
                              help=f'Parallel worker processes (default: {ev["jobs"]})')
        protocol.add_argument('--target-n', dest='target_n', type=positive_int, default=None,
                              help='Subsample to this many bags before evaluation (requires --scenario)')

        parser = argparse.ArgumentParser(
            prog='bagsentinel',
            description='BagSentinel: attention-based multiple instance classification',
            formatter_class=argparse.RawTextHelpFormatter
        )
        subparsers = parser.add_subparsers(title='Commands', dest='command')

        # 生成合成数据
        parser_synth = subparsers.add_parser('synth', parents=[common], help='Generate a synthetic bag dataset')
        parser_synth.add_argument('--n', dest='n_bags', type=positive_int, default=None,
                                  help=f'Number of bags (default: {synth["n_bags"]})')
        parser_synth.add_argument('--pos-frac', dest='positive_fraction', type=unit_interval, default=None,
                                  help=f'Fraction of positive bags (default: {synth["positive_fraction"]})')
        parser_synth.add_argument('--p', dest='p', type=positive_int, default=None,
                                  help=f'Feature dimension (default: {synth["p"]})')
        parser_synth.add_argument('--bag-size-mean', dest='bag_size_mean', type=float, default=None,
                                  help=f'Mean bag size (default: {synth["bag_size_mean"]})')
        parser_synth.add_argument('--bag-size-max', dest='bag_size_max', type=positive_int, default=None,
                                  help=f'Maximum bag size (default: {synth["bag_size_max"]})')
        parser_synth.add_argument('--witness-rate', dest='witness_rate', type=unit_interval, default=None,
                                  help=f'Fraction of primary instances in positive bags (default: {synth["witness_rate"]})')
        parser_synth.add_argument('--signal-shift', dest='signal_shift', type=non_negative_float, default=None,
                                  help=f'Mean shift of primary instances (default: {synth["signal_shift"]})')
        parser_synth.add_argument('--seed', type=non_negative_int, default=None,
                                  help=f'Data generation seed (default: {synth["seed"]})')
        parser_synth.add_argument('--output', type=str, default=None,
                                  help='Bag file to write (default: <out>/synth.csv)')
        parser_synth.set_defaults(func=self.synth)

        # 训练单个模型
        parser_train = subparsers.add_parser(
            'train', parents=[common, seeded, architecture, capacity, variant, fitting],
            help='Train one model and save a checkpoint')
        parser_train.add_argument('data', type=str, help='Training bag file')
        parser_train.add_argument('--val-data', dest='val_data', type=str, default=None,
                                  help='Validation bag file (default: stratified slice of the training data)')
        parser_train.set_defaults(func=self.train)

        # 预测
        parser_predict = subparsers.add_parser('predict', parents=[common], help='Score bags with a checkpoint')
        parser_predict.add_argument('checkpoint', type=str, help='Checkpoint file (.npz)')
        parser_predict.add_argument('data', type=str, help='Bag file to score')
        parser_predict.set_defaults(func=self.predict)

        # 交叉验证
        parser_cv = subparsers.add_parser(
            'cv', parents=[common, seeded, architecture, capacity, variant, fitting, protocol],
            help='Stratified k-fold cross-validation')
        parser_cv.add_argument('data', type=str, help='Bag file')
        parser_cv.add_argument('--scenario', choices=SCENARIOS, default=None,
                               help='Subsampling scenario (requires --target-n)')
        parser_cv.add_argument('--method', type=str, default=None,
                               help='Method name in the score table (default: model variant)')
        parser_cv.add_argument('--dataset-name', dest='dataset_name', type=str, default=None,
                               help='Dataset name in the score table (default: data file stem)')
        parser_cv.set_defaults(func=self.cv)

        # 消融实验
        parser_ablation = subparsers.add_parser(
            'ablation', parents=[common, seeded, architecture, capacity, fitting, protocol],
            help='Cross-validate the FC / Skip / Sparse / Proposed variants')
        parser_ablation.add_argument('data', type=str, help='Bag file')
        parser_ablation.add_argument('--scenario', choices=SCENARIOS + ('both',), default=None,
                                     help='Subsampling scenario (requires --target-n)')
        parser_ablation.add_argument('--seeds', dest='ablation_seeds', type=int_list, default=None,
                                     help=f'Comma-separated master seeds (default: {",".join(map(str, ev["ablation_seeds"]))})')
        parser_ablation.set_defaults(func=self.ablation)

        # m* 扫描
        parser_sweep = subparsers.add_parser(
            'sweep', parents=[common, seeded, architecture, variant, fitting, protocol],
            help='Cross-validate over a grid of instance capacities m*')
        parser_sweep.add_argument('data', type=str, help='Bag file')
        parser_sweep.add_argument('--scenario', choices=SCENARIOS, default=None,
                                  help='Subsampling scenario (requires --target-n)')
        parser_sweep.add_argument('--mstar', dest='m_stars', type=int_list, default=None,
                                  help=f'Comma-separated m* grid (default: {",".join(map(str, ev["m_stars"]))})')
        parser_sweep.set_defaults(func=self.sweep)

        # 导出注意力权重
        parser_attention = subparsers.add_parser('export-attention', parents=[common],
                                                 help='Export the attention weight and mask matrices')
        parser_attention.add_argument('checkpoint', type=str, help='Checkpoint file (.npz)')
        parser_attention.add_argument('data', type=str, help='Bag file')
        parser_attention.set_defaults(func=self.export_attention)

        # 导出提取的特征
        parser_features = subparsers.add_parser('export-features', parents=[common],
                                                help='Export the extracted per-bag features')
        parser_features.add_argument('checkpoint', type=str, help='Checkpoint file (.npz)')
        parser_features.add_argument('data', type=str, help='Bag file')
        parser_features.add_argument('--normalize', action='store_true',
                                     help='Min-max normalize each column, then log-transform (default: off)')
        parser_features.add_argument('--log-constant', dest='log_constant', type=float, default=None,
                                     help=f'Constant K of log(1+u(K-1))/log(K) (default: {ev["log_constant"]})')
        parser_features.add_argument('--stage', choices=evaluation.FEATURE_STAGES, default='features',
                                     help='features: classifier input; pooled: attention pooling output (default: features)')
        parser_features.set_defaults(func=self.export_features)

        # 方法比较
        parser_compare = subparsers.add_parser('compare', parents=[common],
                                               help='Rank methods and test the best two with Wilcoxon signed-rank')
        parser_compare.add_argument('scores', type=str, nargs='+',
                                    help='Score CSV files with columns method,dataset,fold,auc')
        parser_compare.add_argument('--pairing', choices=evaluation.PAIRINGS, default=None,
                                    help=f'Pair per fold or per dataset mean (default: {ev["pairing"]})')
        parser_compare.set_defaults(func=self.compare)

        # 按 manifest 重放
        parser_rerun = subparsers.add_parser('rerun', help='Replay a run from its manifest')
        parser_rerun.add_argument('manifest', type=str, help='manifest.json written by an earlier run')
        parser_rerun.add_argument('--out', type=str, default=None,
                                  help='Write the outputs to another directory (default: the recorded one)')
        parser_rerun.set_defaults(func=self.rerun)

        return parser  # 返回配置好的解析器

    def execute(self, argv):
        """
        解析并执行一条命令。

        :return: 退出码。0 表示所有输出都已写出，1 表示数据、配置或 I/O 错误；用法错误由 argparse 以 2 退出。
        """
        args = self.parser.parse_args(argv)
        if args.command is None:
            self.parser.print_help()
            return 2
        if getattr(args, 'target_n', None) is not None and getattr(args, 'scenario', None) is None:
            self.parser.error('--target-n requires --scenario')
        if getattr(args, 'scenario', None) is not None and getattr(args, 'target_n', None) is None:
            self.parser.error('--scenario requires --target-n')
        try:
            config = self.config if self.config is not None else Config(getattr(args, 'config', None))
            return args.func(args, config, list(argv))
        except (ValueError, OSError) as e:
            LOG.error(f"{args.command} 执行失败: {e}")
            return 1

    # 下面是各个子命令的实现，每个命令写完输出后都会在输出目录中保存 manifest
    def _output_dir(self, args, config):
        out_dir = args.out or config.output_dir
        os.makedirs(out_dir, exist_ok=True)
        return out_dir

    def _finish(self, args, config, argv, out_dir, seeds, inputs, outputs):
        manifest = RunManifest(
            subcommand=args.command,
            argv=replay_argv(argv, out_dir),
            config=config.to_dict(),
            seeds=seeds,
            inputs=inputs,
            outputs=outputs,
            version=describe_version(),
        )
        ManifestManager(os.path.join(out_dir, MANIFEST_FILE)).save_manifest(manifest)
        return 0

    def _scenario_datasets(self, ds, scenario, target_n, master):
        if scenario is None:
            return {"data": ds}
        names = SCENARIOS if scenario == "both" else (scenario,)
        return {
            name: subsample_scenario(ds, name, target_n, derive_seed(master, "scenario", name))
            for name in names
        }

    def synth(self, args, config, argv):
        synth_cfg = config.synth_config(vars(args))
        out_dir = self._output_dir(args, config)
        output = args.output or os.path.join(out_dir, "synth.csv")
        ds = synth_generate(synth_cfg)
        save_bag_file(ds, output)

        summary = bag_size_summary(ds)
        print(f"bags: {summary['n_bags']} (positive {summary['n_positive']}, negative {summary['n_negative']})")
        print(f"bag size: min {summary['min_size']}, median {summary['median_size']:g}, "
              f"mean {summary['mean_size']:.2f}, max {summary['max_size']}")
        for name, count in summary["histogram"]:
            print(f"  {name:>6}: {count}")
        return self._finish(args, config, argv, out_dir, {"synth": synth_cfg.seed}, {}, {"data": output})

    def train(self, args, config, argv):
        flags = vars(args)
        ds = load_bag_file(args.data)
        eval_cfg = config.eval_config(flags)
        master = eval_cfg.seed
        model_cfg = config.model_config(ds, flags, seed=derive_seed(master, "init"))
        train_cfg = config.train_config(flags, seed=derive_seed(master, "train"))
        if train_cfg.learning_rate == 0:
            LOG.warning("learning_rate 为 0，训练不会改变模型参数")
        out_dir = self._output_dir(args, config)
        reporter = ReportGenerator(out_dir)
        outputs = {}

        if args.val_data:
            fit_ds, val_ds = ds, load_bag_file(args.val_data)
        elif train_cfg.selection_metric == "val_auc" and eval_cfg.validation_fraction > 0:
            fit_pos, val_pos = stratified_holdout(ds.labels, eval_cfg.validation_fraction, derive_seed(master, "holdout"))
            fit_ds, val_ds = ds.subset(fit_pos), ds.subset(val_pos)
            outputs["validation"] = save_bag_file(val_ds, reporter.path("validation.csv"))
        else:
            fit_ds, val_ds = ds, None

        best_model, history = train(init_model(model_cfg), fit_ds, val_ds, train_cfg)
        outputs["checkpoint"] = save_checkpoint(best_model, reporter.path("model.npz"))
        outputs["history"] = reporter.write_history(history)
        seeds = {"master": master, "init": model_cfg.seed, "train": train_cfg.seed}
        outputs["summary"] = reporter.write_summary(
            config.to_dict(), seeds,
            extra={"variant": model_cfg.variant, "selection_metric": history.metric_name,
                   "best_epoch": history.best_epoch + 1, "best_metric": history.best_metric},
        )
        print(f"{model_cfg.variant}: best epoch {history.best_epoch + 1}, "
              f"{history.metric_name}={history.best_metric:.12g}")
        inputs = {"data": args.data, "val_data": args.val_data}
        return self._finish(args, config, argv, out_dir, seeds, inputs, outputs)

    def predict(self, args, config, argv):
        model = load_checkpoint(args.checkpoint)
        ds = load_bag_file(args.data)
        prediction = predict(model, ds)
        out_dir = self._output_dir(args, config)
        frame = pd.DataFrame({
            "bag_id": list(prediction.bag_ids),
            "label": prediction.labels,
            "probability": prediction.probabilities,
            "logit": prediction.logits,
        })
        path = write_csv(frame, os.path.join(out_dir, "predictions.csv"))
        if len(np.unique(prediction.labels)) == 2:
            print(f"AUC={evaluation.auc(prediction.probabilities, prediction.labels):.12g}")
        inputs = {"checkpoint": args.checkpoint, "data": args.data}
        return self._finish(args, config, argv, out_dir, {}, inputs, {"predictions": path})

    def cv(self, args, config, argv):
        flags = vars(args)
        eval_cfg = config.eval_config(flags)
        ds = load_bag_file(args.data)
        (scenario, ds), = self._scenario_datasets(ds, args.scenario, args.target_n, eval_cfg.seed).items()
        model_cfg = config.model_config(ds, flags)
        train_cfg = config.train_config(flags)
        report = evaluation.cross_validate(
            ds, model_cfg, train_cfg, k=eval_cfg.k, seed=eval_cfg.seed,
            validation_fraction=eval_cfg.validation_fraction, jobs=eval_cfg.jobs,
        )
        out_dir = self._output_dir(args, config)
        reporter = ReportGenerator(out_dir)
        dataset = args.dataset_name or os.path.splitext(os.path.basename(args.data))[0]
        outputs = reporter.write_cv_report(report, method=args.method, dataset=dataset)
        outputs["summary"] = reporter.write_summary(
            config.to_dict(), {"master": eval_cfg.seed}, report.fold_aucs, report.elapsed_seconds,
            extra={"variant": report.variant, "scenario": scenario, "mean_auc": report.mean_auc},
        )
        for fold, value in enumerate(report.fold_aucs):
            print(f"fold {fold + 1}: AUC={value:.6f}")
        print(f"mean AUC={report.mean_auc:.6f}")
        return self._finish(args, config, argv, out_dir, {"master": eval_cfg.seed}, {"data": args.data}, outputs)

    def ablation(self, args, config, argv):
        flags = vars(args)
        eval_cfg = config.eval_config(flags)
        ds = load_bag_file(args.data)
        datasets = self._scenario_datasets(ds, args.scenario, args.target_n, eval_cfg.seed)
        base_cfg = config.model_config(ds, flags)
        train_cfg = config.train_config(flags)
        result = evaluation.ablation_run(
            datasets, base_cfg, train_cfg, seeds=eval_cfg.ablation_seeds, k=eval_cfg.k,
            validation_fraction=eval_cfg.validation_fraction, jobs=eval_cfg.jobs,
        )
        out_dir = self._output_dir(args, config)
        reporter = ReportGenerator(out_dir)
        outputs = {
            "table": reporter.write_table(result.table, "ablation.csv"),
            "runs": reporter.write_table(result.runs, "ablation_runs.csv"),
        }
        print(result.table.to_string(index=False))
        seeds = {"ablation": list(eval_cfg.ablation_seeds)}
        return self._finish(args, config, argv, out_dir, seeds, {"data": args.data}, outputs)

    def sweep(self, args, config, argv):
        flags = vars(args)
        eval_cfg = config.eval_config(flags)
        ds = load_bag_file(args.data)
        (_, ds), = self._scenario_datasets(ds, args.scenario, args.target_n, eval_cfg.seed).items()
        base_cfg = config.model_config(ds, flags)
        train_cfg = config.train_config(flags)
        table = evaluation.bagsize_sweep(
            ds, base_cfg, train_cfg, m_stars=eval_cfg.m_stars, k=eval_cfg.k, seed=eval_cfg.seed,
            validation_fraction=eval_cfg.validation_fraction, jobs=eval_cfg.jobs,
        )
        out_dir = self._output_dir(args, config)
        path = ReportGenerator(out_dir).write_table(table, "sweep.csv")
        print(table.to_string(index=False))
        return self._finish(args, config, argv, out_dir, {"master": eval_cfg.seed}, {"data": args.data}, {"sweep": path})

    def export_attention(self, args, config, argv):
        model = load_checkpoint(args.checkpoint)
        ds = load_bag_file(args.data)
        out_dir = self._output_dir(args, config)
        attention_path, mask_path = evaluation.export_attention(
            model, ds, os.path.join(out_dir, "attention.csv"), os.path.join(out_dir, "attention_mask.csv"),
        )
        print(f"attention: {attention_path}")
        print(f"mask: {mask_path}")
        inputs = {"checkpoint": args.checkpoint, "data": args.data}
        return self._finish(args, config, argv, out_dir, {}, inputs, {"attention": attention_path, "mask": mask_path})

    def export_features(self, args, config, argv):
        model = load_checkpoint(args.checkpoint)
        ds = load_bag_file(args.data)
        log_constant = config.resolve("eval", "log_constant", args.log_constant)
        out_dir = self._output_dir(args, config)
        filename = "features_normalized.csv" if args.normalize else "features.csv"
        path = evaluation.export_features(
            model, ds, os.path.join(out_dir, filename), normalize=args.normalize,
            log_constant=log_constant, stage=args.stage,
        )
        print(f"features: {path}")
        inputs = {"checkpoint": args.checkpoint, "data": args.data}
        return self._finish(args, config, argv, out_dir, {}, inputs, {"features": path})

    def compare(self, args, config, argv):
        pairing = config.resolve("eval", "pairing", args.pairing)
        table = pd.concat([evaluation.load_score_table(path) for path in args.scores], ignore_index=True)
        if table.duplicated(subset=["method", "dataset", "fold"]).any():
            raise ValueError("多个分数文件中存在重复的 (method, dataset, fold) 记录")
        comparison = evaluation.compare_methods(table, pairing=pairing)
        out_dir = self._output_dir(args, config)
        reporter = ReportGenerator(out_dir)
        ranks = comparison.ranks.rename_axis("method").reset_index()
        outputs = {"ranks": reporter.write_table(ranks, "ranks.csv")}
        outputs["summary"] = reporter.write_summary(
            config.to_dict(), {}, extra={
                "best": comparison.best,
                "second": comparison.second,
                "pairing": comparison.pairing,
                "wilcoxon_statistic": comparison.test.statistic,
                "wilcoxon_p_value": comparison.test.p_value,
                "wilcoxon_n": comparison.test.n,
                "wilcoxon_method": comparison.test.method,
            },
        )
        print(ranks.to_string(index=False))
        print(f"{comparison.best} vs {comparison.second} ({pairing} pairing, n={comparison.test.n}): "
              f"W+={comparison.test.statistic:g}, p={comparison.test.p_value:.6g}")
        return self._finish(args, config, argv, out_dir, {}, {"scores": list(args.scores)}, outputs)

    def rerun(self, args, config, argv):
        manifest = ManifestManager(args.manifest).load_manifest()
        replay = list(manifest.argv)
        if args.out:
            replay = replay_argv(replay, args.out)
        LOG.info(f"按 manifest 重放: {' '.join(replay)}")
        # 使用 manifest 中保存的完整配置，不再读取配置文件
        return CommandHandler(Config.from_dict(manifest.config)).execute(replay)

    def print_help(self, args=None):
        self.parser.print_help()  # 输出帮助信息

// SPDX-License-Identifier: Apache-2.0
//
// lgmimo command-line driver. Manufacturer side: gen-data, train-collective,
// extract. Device side: train-individual, evaluate. Plus analyze and the
// one-shot pipeline.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "lgmimo/config.hpp"
#include "lgmimo/experiments.hpp"

namespace fs = std::filesystem;
using namespace lgmimo;
namespace ex = lgmimo::experiments;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    bool quiet = false;
};

RunConfig resolve(const Common& o)
{
    RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
    if (o.seed)
        c.master_seed = *o.seed;
    if (o.workers)
        c.workers = *o.workers;
    validate(c);
    return c;
}

ex::Log logger(const Common& o)
{
    if (o.quiet)
        return {};
    return [](const std::string& s) { std::cerr << s << '\n'; };
}

void say(const ex::Log& log, const std::string& s)
{
    if (log)
        log(s);
}

void add_common(CLI::App* app, Common& o)
{
    app->add_option("--config", o.config, "Run configuration (JSON); defaults apply when omitted")->check(CLI::ExistingFile);
    app->add_option("--seed", o.seed, "Override the master seed from the config");
    app->add_option("--workers", o.workers, "Worker threads (default: LGMIMO_WORKERS, then hardware concurrency)");
    app->add_flag("--quiet", o.quiet, "Suppress progress messages on stderr");
}

ex::Stamp stamp_of(const RunConfig& c) { return {config_hash(c), c.master_seed}; }

io::json provenance(const RunConfig& c) { return {{"config_hash", config_hash(c)}, {"master_seed", c.master_seed}}; }

fs::path task_path(const fs::path& dir, std::uint64_t id) { return dir / ("task_" + std::to_string(id) + ".json"); }

TaskDataset load_task(const fs::path& dir, std::uint64_t id) { return load_dataset(task_path(dir, id)); }

void require_geometry(const nn::Model& m, const TaskDataset& ds)
{
    const auto& info = m.info();
    if (info.nt != ds.geometry.nt || info.nr != ds.geometry.nr)
        fail(ErrorKind::IncompatibleGeometry,
             "model is wired for Nt=" + std::to_string(info.nt) + ", Nr=" + std::to_string(info.nr) +
                 " but the dataset has Nt=" + std::to_string(ds.geometry.nt) + ", Nr=" + std::to_string(ds.geometry.nr));
}

/// Individual architecture for a dataset: native SDNet, or the
/// width-upsampled variant when the dataset has half the native streams.
nn::Model individual_for(const RunConfig& c, const TaskDataset& ds)
{
    if (ds.geometry.nt * 2 == c.geometry.nt)
        return sdnet::build_upsampled_sdnet(learngene::kIndividualConvs, ds.geometry.nt, ds.geometry.nr, c.geometry.nt);
    return sdnet::build_sdnet(learngene::kIndividualConvs, ds.geometry.nt, ds.geometry.nr);
}

// ---------------------------------------------------------------- manufacturer

int cmd_gen_data(const Common& o, const fs::path& out)
{
    const auto c = resolve(o);
    const auto log = logger(o);
    const auto tasks = ex::make_tasks(c, ex::resolve_workers(c.workers));
    for (const auto* group : {&tasks.collective, &tasks.targets})
        for (const auto& t : *group) {
            save_dataset(t, task_path(out, t.task_id), provenance(c));
            say(log, "wrote " + task_path(out, t.task_id).string());
        }
    return 0;
}

int cmd_train_collective(const Common& o, const fs::path& data, const fs::path& out, const fs::path& gradsig)
{
    const auto c = resolve(o);
    const auto log = logger(o);
    std::vector<TaskDataset> tasks;
    for (int k = 0; k < c.collective_tasks; ++k)
        tasks.push_back(load_task(data, static_cast<std::uint64_t>(k)));
    learngene::CollectiveConfig cc;
    cc.train = ex::train_config(c, c.collective_epochs, c.master_seed);
    cc.tau = c.tau;
    auto res = learngene::train_collective(tasks, cc, [&](std::size_t k, const sdnet::EpochRecord& r) {
        say(log, "task " + std::to_string(k) + " epoch " + std::to_string(r.epoch) + " val SER " + io::num(r.val_ser));
    });
    res.model.info().config_hash = config_hash(c);
    nn::save_checkpoint(res.model, out, provenance(c));
    io::write_text(gradsig, learngene::gradsig_to_csv(res.log, "lgmimo gradsig config_hash=" + config_hash(c) +
                                                                    " master_seed=" + std::to_string(c.master_seed)));
    return 0;
}

int cmd_extract(const Common& o, const fs::path& model, const fs::path& gradsig, const fs::path& out)
{
    const auto c = resolve(o);
    const auto log = logger(o);
    const auto ckpt = nn::load_checkpoint(model);
    const auto sig = learngene::gradsig_from_csv(io::read_text(gradsig));
    const auto unit = learngene::extract_learngene(ckpt.model, sig, {c.rho_sel, c.window, c.max_layers});
    learngene::save_unit(unit, out, provenance(c));
    std::string ids;
    for (int id : unit.source_ids())
        ids += (ids.empty() ? "" : ",") + std::to_string(id);
    for (const auto& w : unit.warnings)
        say(log, "warning: " + w);
    std::cout << io::json{{"layers", unit.source_ids()}, {"parameters", unit.parameter_count()}, {"unit", out.string()}}.dump()
              << '\n';
    return 0;
}

// ---------------------------------------------------------------- device

struct IndividualArgs {
    fs::path data;
    std::uint64_t task = 0;
    std::string scheme = "scratch";
    std::string strategy = "bottom";
    std::string unit;
    std::string collective;
    std::string source_model;
    std::optional<std::uint64_t> run_seed;
    fs::path out;
    std::string log_path;
};

int cmd_train_individual(const Common& o, const IndividualArgs& a)
{
    const auto c = resolve(o);
    const auto log = logger(o);
    const auto target = load_task(a.data, a.task);
    const std::uint64_t seed = a.run_seed.value_or(c.seeds.front());
    ex::Scheme scheme;
    if (a.scheme == "scratch" || a.scheme == "transfer")
        scheme = ex::parse_scheme(a.scheme);
    else if (a.scheme == "learngene")
        scheme = ex::parse_scheme(a.strategy);
    else
        fail(ErrorKind::ConfigError, "--scheme must be scratch, transfer or learngene");

    ex::SchemeInputs in;
    std::optional<learngene::LearngeneUnit> unit;
    std::optional<nn::Model> collective, pretrained;
    const auto base = individual_for(c, target);
    if (scheme.kind == ex::SchemeKind::Learngene) {
        if (a.unit.empty())
            fail(ErrorKind::MissingUnit, "--unit is required for the learngene scheme");
        unit = learngene::load_unit(a.unit);
        in.unit = &*unit;
        if (!a.collective.empty()) {
            collective = nn::load_checkpoint(a.collective).model;
            in.collective = &*collective;
        }
    }
    if (scheme.kind == ex::SchemeKind::Transfer) {
        if (!a.source_model.empty()) {
            pretrained = nn::load_checkpoint(a.source_model).model;
        } else {
            say(log, "pre-training on source task " + std::to_string(c.transfer_source));
            const auto source = load_task(a.data, static_cast<std::uint64_t>(c.transfer_source));
            pretrained = ex::run_scheme({}, source, ex::train_config(c, c.individual_epochs, c.master_seed), {}, base, "-").model;
        }
        in.pretrained = &*pretrained;
    }
    const double lambda = scheme.kind == ex::SchemeKind::Learngene ? c.lambda : 0.0;
    auto run = ex::run_scheme(scheme, target, ex::train_config(c, c.individual_epochs, seed, lambda), in, base);
    run.model.info().config_hash = config_hash(c);
    auto prov = provenance(c);
    prov["scheme"] = run.record.scheme;
    prov["target_task"] = a.task;
    prov["seed"] = seed;
    prov["dataset_hash"] = run.record.dataset_hash;
    nn::save_checkpoint(run.model, a.out, prov);
    if (!a.log_path.empty()) {
        const std::vector<ex::MetricsRecord> recs{run.record};
        io::write_text(a.log_path, ex::metrics_jsonl(recs, stamp_of(c)));
    }
    say(log, run.record.scheme + " final val SER " + io::num(run.record.final_val_ser));
    return 0;
}

int cmd_evaluate(const Common& o, const fs::path& model, const fs::path& data, std::uint64_t task,
                 std::vector<double> grid, const std::string& out)
{
    const auto c = resolve(o);
    auto ckpt = nn::load_checkpoint(model);
    const auto ds = load_task(data, task);
    require_geometry(ckpt.model, ds);
    if (grid.empty())
        grid = c.snr_grid;
    const auto& prov = ckpt.manifest.contains("provenance") ? ckpt.manifest["provenance"] : io::json::object();
    ex::MetricsRecord rec;
    rec.scheme = prov.value("scheme", std::string("model"));
    rec.target_task = task;
    rec.seed = prov.value("seed", std::uint64_t{0});
    rec.final_val_ser = sdnet::evaluate_ser(ckpt.model, ds.val()).ser;
    rec.trainable_parameters = nn::count_params(ckpt.model).total;
    rec.flops = nn::count_flops(ckpt.model).total;
    rec.dataset_hash = dataset_hash(ds);
    const auto sets = ex::sweep_datasets(c, ds.config, grid, c.sweep_samples);
    std::string csv = stamp_of(c).comment("summary") + ex::kSummaryHeader;
    for (const auto& curve : {ex::baseline_curve(DetectorTag::ZF, sets), ex::baseline_curve(DetectorTag::MMSE, sets)})
        for (const auto& p : curve.points)
            csv += ex::baseline_row(curve.label, task, p.snr_db, p.ser, rec.dataset_hash);
    for (const auto& p : ex::model_curve(rec.scheme, ckpt.model, sets).points)
        csv += ex::summary_row(rec, p.snr_db, p.ser);
    if (out.empty())
        std::cout << csv;
    else
        io::write_text(out, csv);
    return 0;
}

// ---------------------------------------------------------------- analyze

int cmd_analyze_pcc(const Common& o, const fs::path& data, const std::string& out)
{
    const auto c = resolve(o);
    std::vector<TaskDataset> tasks;
    for (int k = 0; k < c.matrix_tasks; ++k)
        tasks.push_back(data.empty() ? ex::make_dataset(c, static_cast<std::uint64_t>(k), c.geometry, c.samples_per_task, c.snr_db)
                                     : load_task(data, static_cast<std::uint64_t>(k)));
    const auto st = ex::run_generalization_study(c, tasks, ex::resolve_workers(c.workers), logger(o));
    if (!out.empty())
        io::write_text(out, ex::matrix_csv(st, stamp_of(c)));
    io::json j = {{"pcc", st.pcc_value ? io::json(*st.pcc_value) : io::json(nullptr)},
                  {"entries", st.pcc_x.size()},
                  {"excluded", st.median.excluded},
                  {"mean_matched_ser", st.median.mean_matched()},
                  {"mean_mismatched_ser", st.median.mean_mismatched()},
                  {"config_hash", config_hash(c)},
                  {"master_seed", c.master_seed}};
    std::cout << j.dump() << '\n';
    return 0;
}

int cmd_analyze_zf_noise(const Common& o, int channels, std::size_t trials, const std::string& out)
{
    const auto c = resolve(o);
    std::string csv = stamp_of(c).comment("zf-noise");
    csv += "channel,trials,covariance_rel_error,empirical_total_variance,analytic_total_variance,total_rel_error\n";
    for (const auto& r : ex::zf_noise_study(c, channels, trials))
        csv += std::to_string(r.channel) + "," + std::to_string(r.trials) + "," + io::num(r.covariance_rel_error) + "," +
               io::num(r.empirical_total) + "," + io::num(r.analytic_total) + "," + io::num(r.total_rel_error()) + "\n";
    if (out.empty())
        std::cout << csv;
    else
        io::write_text(out, csv);
    return 0;
}

int cmd_analyze_spectra(const Common& o, const fs::path& data, const std::string& out)
{
    const auto c = resolve(o);
    std::vector<TaskDataset> tasks;
    for (int k = 0; k < c.collective_tasks + c.target_tasks; ++k)
        tasks.push_back(load_task(data, static_cast<std::uint64_t>(k)));
    const auto csv = ex::spectra_csv(tasks, stamp_of(c));
    if (out.empty())
        std::cout << csv;
    else
        io::write_text(out, csv);
    return 0;
}

int cmd_analyze_complexity(const Common& o, const std::string& out)
{
    const auto c = resolve(o);
    const auto rows = ex::complexity_report(c.geometry, c.max_layers);
    if (!out.empty())
        io::write_text(out, ex::complexity_csv(rows, stamp_of(c)));
    std::printf("%-22s %-18s %12s %12s %9s\n", "scheme", "layers", "parameters", "flops", "ratio");
    for (const auto& r : rows)
        std::printf("%-22s %-18s %12llu %12llu %9s\n", r.scheme.c_str(), r.layers.c_str(),
                    static_cast<unsigned long long>(r.parameters), static_cast<unsigned long long>(r.flops),
                    ex::format_percent(r.transferred_ratio).c_str());
    return 0;
}

int cmd_pipeline(const Common& o, const fs::path& out)
{
    const auto c = resolve(o);
    const auto res = ex::run_pipeline(c, out, logger(o));
    std::cout << io::json{{"config_hash", res.config_hash},
                          {"master_seed", c.master_seed},
                          {"learngene_layers", res.unit.source_ids()},
                          {"summary", res.summary_path.string()},
                          {"gradsig", res.gradsig_path.string()}}
                     .dump()
              << '\n';
    return 0;
}

int report(ErrorKind kind, const std::string& message)
{
    const bool config = kind == ErrorKind::ConfigError || kind == ErrorKind::InvalidArgument;
    const int code = config ? kExitConfig : kExitRuntime;
    std::cerr << io::json{{"error", std::string(to_string(kind))}, {"message", message}, {"exit_code", code}}.dump() << '\n';
    return code;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"lgmimo: deep MIMO detection with learngene transfer"};
    app.require_subcommand(1);
    Common common;
    std::function<int()> action;

    auto* gen = app.add_subcommand("gen-data", "Generate collective and target task datasets");
    add_common(gen, common);
    std::string gen_out;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->callback([&] { action = [&] { return cmd_gen_data(common, gen_out); }; });

    auto* tc = app.add_subcommand("train-collective", "Train the collective model and log gradient significance");
    add_common(tc, common);
    std::string tc_data, tc_out, tc_sig;
    tc->add_option("--data", tc_data, "Dataset directory from gen-data")->required();
    tc->add_option("--out", tc_out, "Checkpoint to write")->required();
    tc->add_option("--gradsig", tc_sig, "Gradient significance CSV to write")->required();
    tc->callback([&] { action = [&] { return cmd_train_collective(common, tc_data, tc_out, tc_sig); }; });

    auto* ext = app.add_subcommand("extract", "Extract the learngene unit from a collective model");
    add_common(ext, common);
    std::string ext_model, ext_sig, ext_out;
    ext->add_option("--model", ext_model, "Collective checkpoint")->required()->check(CLI::ExistingFile);
    ext->add_option("--gradsig", ext_sig, "Gradient significance CSV")->required()->check(CLI::ExistingFile);
    ext->add_option("--out", ext_out, "Unit file to write")->required();
    ext->callback([&] { action = [&] { return cmd_extract(common, ext_model, ext_sig, ext_out); }; });

    auto* ti = app.add_subcommand("train-individual", "Train an individual model on one target task");
    add_common(ti, common);
    IndividualArgs ia;
    std::string ia_data, ia_out;
    ti->add_option("--data", ia_data, "Dataset directory")->required();
    ti->add_option("--task", ia.task, "Target task id")->required();
    ti->add_option("--scheme", ia.scheme, "scratch, transfer or learngene")
        ->check(CLI::IsMember({"scratch", "transfer", "learngene"}));
    ti->add_option("--strategy", ia.strategy,
                   "Expansion strategy: bottom, embedding-top, embedding-middle, inheriting-top, inheriting-middle");
    ti->add_option("--unit", ia.unit, "Learngene unit file (learngene scheme)");
    ti->add_option("--collective", ia.collective, "Collective checkpoint (inheriting-top/middle)");
    ti->add_option("--source-model", ia.source_model, "Pre-trained source checkpoint (transfer); trained on demand if omitted");
    ti->add_option("--run-seed", ia.run_seed, "Seed for initialisation and shuffling (default: first config seed)");
    ti->add_option("--out", ia_out, "Checkpoint to write")->required();
    ti->add_option("--log", ia.log_path, "Per-epoch metrics JSONL to write");
    ti->callback([&] {
        ia.data = ia_data;
        ia.out = ia_out;
        action = [&] { return cmd_train_individual(common, ia); };
    });

    auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint against ZF and MMSE over an SNR grid");
    add_common(ev, common);
    std::string ev_model, ev_data, ev_out;
    std::uint64_t ev_task = 0;
    std::vector<double> ev_grid;
    ev->add_option("--model", ev_model, "Individual checkpoint")->required()->check(CLI::ExistingFile);
    ev->add_option("--data", ev_data, "Dataset directory")->required();
    ev->add_option("--task", ev_task, "Task id")->required();
    ev->add_option("--snr-grid", ev_grid, "SNR points in dB (default: config grid)")->delimiter(',');
    ev->add_option("--out", ev_out, "summary CSV to write (stdout when omitted)");
    ev->callback([&] { action = [&] { return cmd_evaluate(common, ev_model, ev_data, ev_task, ev_grid, ev_out); }; });

    auto* an = app.add_subcommand("analyze", "Analyses: pcc, zf-noise, spectra, complexity");
    an->require_subcommand(1);
    auto* an_pcc = an->add_subcommand("pcc", "Generalization matrix and PCC of dataset distance against gen error");
    add_common(an_pcc, common);
    std::string pcc_data, pcc_out;
    an_pcc->add_option("--data", pcc_data, "Dataset directory (tasks are generated when omitted)");
    an_pcc->add_option("--out", pcc_out, "Matrix CSV to write");
    an_pcc->callback([&] { action = [&] { return cmd_analyze_pcc(common, pcc_data, pcc_out); }; });

    auto* an_zf = an->add_subcommand("zf-noise", "Empirical ZF noise covariance against the closed form");
    add_common(an_zf, common);
    int zf_channels = 5;
    std::size_t zf_trials = 100000;
    std::string zf_out;
    an_zf->add_option("--channels", zf_channels, "Number of fixed channels");
    an_zf->add_option("--trials", zf_trials, "Noise draws per channel");
    an_zf->add_option("--out", zf_out, "CSV to write (stdout when omitted)");
    an_zf->callback([&] { action = [&] { return cmd_analyze_zf_noise(common, zf_channels, zf_trials, zf_out); }; });

    auto* an_sp = an->add_subcommand("spectra", "Mean eigenvalue spectra of H^H H per task");
    add_common(an_sp, common);
    std::string sp_data, sp_out;
    an_sp->add_option("--data", sp_data, "Dataset directory")->required();
    an_sp->add_option("--out", sp_out, "CSV to write (stdout when omitted)");
    an_sp->callback([&] { action = [&] { return cmd_analyze_spectra(common, sp_data, sp_out); }; });

    auto* an_cx = an->add_subcommand("complexity", "Parameter, FLOP and transferred-ratio table");
    add_common(an_cx, common);
    std::string cx_out;
    an_cx->add_option("--out", cx_out, "CSV to write");
    an_cx->callback([&] { action = [&] { return cmd_analyze_complexity(common, cx_out); }; });

    auto* pipe = app.add_subcommand("pipeline", "Run gen-data through evaluation in one process");
    add_common(pipe, common);
    std::string pipe_out;
    pipe->add_option("--out", pipe_out, "Output directory")->required();
    pipe->callback([&] { action = [&] { return cmd_pipeline(common, pipe_out); }; });

    auto* dc = app.add_subcommand("default-config", "Print the default run configuration");
    dc->callback([&] {
        action = [] {
            std::cout << to_json(RunConfig{}).dump(2) << '\n';
            return 0;
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report(ErrorKind::ConfigError, e.what());
    } catch (const Error& e) {
        return report(e.kind(), e.what());
    }
    try {
        return action ? action() : 0;
    } catch (const Error& e) {
        return report(e.kind(), e.what());
    } catch (const std::exception& e) {
        return report(ErrorKind::IoError, e.what());
    }
}

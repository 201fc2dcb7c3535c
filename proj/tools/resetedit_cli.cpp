// resetedit command-line driver. Every command writes into --out:
//   artifacts/   latents (.rste), images (.rste + .ppm), messages
//   checkpoints/ trained stages (train-* commands)
//   reports/     tab-separated tables
//   manifest.json, config.json
// Nothing time-dependent is written, so reruns give byte-identical files.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "resetedit/checkpoint.hpp"
#include "resetedit/config.hpp"
#include "resetedit/dataset.hpp"
#include "resetedit/errors.hpp"
#include "resetedit/pipeline.hpp"
#include "resetedit/stack.hpp"
#include "resetedit/tensor_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace resetedit;

namespace {

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = "run";
    std::string checkpoints;
    std::string in;
    std::optional<float> guidance;
    std::optional<std::int64_t> cls;
    std::int64_t count = 16;
    std::int64_t seeds = 20;
    std::optional<std::int64_t> opt_steps;
    bool quantize_8bit = false;
    bool resume = false;
};

void log_line(const std::string& s) { std::cerr << s << '\n'; }

std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(8) << v;
    return os.str();
}

/// Collects outputs and writes the run manifest last.
class Run {
public:
    Run(std::string command, const Options& opt) : command_(std::move(command)), root_(opt.out) {
        fs::create_directories(root_);
    }

    const fs::path& root() const { return root_; }

    void tensor(const std::string& rel, const Tensor& t) {
        io::save_tensor(prepare(rel), t);
        record(rel);
    }
    void ppm(const std::string& rel, const Tensor& image) {
        io::save_ppm(prepare(rel), image);
        record(rel);
    }
    void text(const std::string& rel, const std::string& s) {
        io::write_text_atomic(prepare(rel), s);
        record(rel);
    }
    void input(const fs::path& p) { inputs_[p.filename().string()] = io::sha256_hex(io::read_file(p)); }

    void finish(const Config& config, std::uint64_t seed, const std::map<std::string, std::string>& checkpoints,
                const json& options) {
        text("config.json", config.to_json());
        json m;
        m["command"] = command_;
        m["config_sha256"] = config.hash();
        m["seed"] = seed;
        m["checkpoints"] = checkpoints;
        m["inputs"] = inputs_;
        m["options"] = options;
        m["outputs"] = outputs_;
        io::write_text_atomic(root_ / "manifest.json", m.dump(2) + "\n");
    }

private:
    fs::path prepare(const std::string& rel) const {
        const auto p = root_ / rel;
        fs::create_directories(p.parent_path());
        return p;
    }
    void record(const std::string& rel) {
        outputs_[rel] = io::sha256_hex(io::read_file(root_ / rel));
    }

    std::string command_;
    fs::path root_;
    std::map<std::string, std::string> outputs_, inputs_;
};

Config base_config(const Options& opt) {
    Config c = opt.config_path.empty() ? Config{} : Config::load(opt.config_path);
    if (opt.seed) c.seed = *opt.seed;
    c.validate();
    return c;
}

fs::path checkpoint_dir(const Options& opt) {
    return opt.checkpoints.empty() ? fs::path(opt.out) / "checkpoints" : fs::path(opt.checkpoints);
}

bool has_checkpoints(const fs::path& dir) {
    for (const char* s : {"vae", "denoiser", "codec", "injector"})
        if (fs::exists(dir / s)) return true;
    return false;
}

std::map<std::string, std::string> checkpoint_hashes(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const char* s : {"vae", "denoiser", "codec", "injector"})
        if (fs::exists(dir / s)) out[s] = checkpoint_hash(dir / s);
    return out;
}

Stack load_stack(const Options& opt) {
    const auto dir = checkpoint_dir(opt);
    if (!has_checkpoints(dir)) throw ContractError("no checkpoints under " + dir.string() + "; pass --checkpoints");
    return Stack::load(dir, log_line);
}

GuidanceConfig guidance_of(const Options& opt, float fallback) { return GuidanceConfig(opt.guidance.value_or(fallback)); }

Condition class_of(const Options& opt, const Config& c, std::int64_t fallback = 0) {
    const auto id = opt.cls.value_or(fallback);
    if (id < 0 || id >= c.dataset.classes)
        throw ContractError("--class must be in [0, " + std::to_string(c.dataset.classes) + ")");
    return Condition(id);
}

std::string index_map_tsv(const IndexMap& m) {
    std::ostringstream os;
    for (std::int64_t i = 0; i < m.rows(); ++i)
        for (std::int64_t j = 0; j < m.cols(); ++j) os << m.at(i, j) << (j + 1 == m.cols() ? '\n' : '\t');
    return os.str();
}

std::string key_value_tsv(const std::map<std::string, std::string>& kv) {
    std::string s = "key\tvalue\n";
    for (const auto& [k, v] : kv) s += k + '\t' + v + '\n';
    return s;
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---- commands ----

int cmd_dataset(const Options& opt) {
    const auto config = base_config(opt);
    Run run("dataset", opt);
    const auto data = make_dataset(config.dataset.images, config.dataset.classes, config.seed, config.geometry.image_size);
    const auto n = std::min<std::size_t>(data.size(), static_cast<std::size_t>(std::max<std::int64_t>(opt.count, 0)));
    std::vector<Tensor> images;
    std::string labels = "index\tclass\tname\n";
    std::vector<std::int64_t> hist(static_cast<std::size_t>(config.dataset.classes), 0);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto id = data[i].cond.id();
        ++hist[static_cast<std::size_t>(id)];
        if (i >= n) continue;
        images.push_back(data[i].image);
        labels += std::to_string(i) + '\t' + std::to_string(id) + '\t' + class_name(id) + '\n';
        std::ostringstream name;
        name << "artifacts/preview/" << std::setw(4) << std::setfill('0') << i << ".ppm";
        run.ppm(name.str(), data[i].image);
    }
    if (!images.empty()) run.tensor("artifacts/images.rste", stack(images));
    run.text("artifacts/labels.tsv", labels);
    std::string h = "class\tname\tcount\n";
    for (std::size_t k = 0; k < hist.size(); ++k)
        h += std::to_string(k) + '\t' + class_name(static_cast<std::int64_t>(k)) + '\t' + std::to_string(hist[k]) + '\n';
    run.text("reports/dataset.tsv", h);
    run.finish(config, config.seed, {}, {{"count", n}});
    return 0;
}

int cmd_train(const Options& opt, const std::string& stage) {
    const auto ck = fs::path(opt.out) / "checkpoints";
    std::optional<Stack> s;
    if (has_checkpoints(ck)) {
        s.emplace(Stack::load(ck, log_line));
        if ((!opt.config_path.empty() || opt.seed) && base_config(opt).hash() != s->config().hash())
            throw ContractError("existing checkpoints in " + ck.string() +
                                " were built from a different config; use a fresh --out");
    } else {
        s.emplace(base_config(opt), log_line);
    }
    const std::vector<std::string> order = {"vae", "denoiser", "codec", "injector"};
    for (const auto& st : order) {
        if (stage != "all" && stage != st) continue;
        const bool have = st == "vae" ? s->has_vae() : st == "denoiser" ? s->has_denoiser()
                          : st == "codec" ? s->has_codec() : s->has_injector();
        if (opt.resume && have) {
            log_line(st + ": keeping existing checkpoint");
            continue;
        }
        if (st == "vae") s->train_vae();
        else if (st == "denoiser") s->train_denoiser();
        else if (st == "codec") s->train_codec();
        else s->train_injector();
    }

    Run run("train-" + stage, opt);
    const auto hashes = s->save(ck);
    for (const auto& st : order)
        if (!hashes.contains(st)) fs::remove_all(ck / st);
    std::string rep = "metric\tvalue\n";
    for (const auto& [k, v] : s->metrics())
        if (!k.ends_with(".seconds")) rep += k + '\t' + num(v) + '\n';
    run.text("reports/train-" + stage + ".tsv", rep);
    run.finish(s->config(), s->config().seed, hashes, {{"stage", stage}});
    return 0;
}

int cmd_generate(const Options& opt) {
    const auto s = load_stack(opt);
    const auto& c = s.config();
    const auto models = s.models();
    const auto seed = opt.seed.value_or(c.seed);
    const auto cond = class_of(opt, c);
    const auto w = guidance_of(opt, c.guidance.scale);
    const auto r = generate_with_embedding(seed, cond, w, models);
    const auto reference = models.pixel->decode(r.z_0);
    const auto fidelity = metrics(r.image, reference);

    Run run("generate", opt);
    run.tensor("artifacts/z_T.rste", r.z_T);
    run.tensor("artifacts/z_0.rste", r.z_0);
    run.tensor("artifacts/z_r.rste", r.z_r);
    run.tensor("artifacts/z_0m.rste", r.z_0m);
    run.tensor("artifacts/image.rste", r.image);
    run.ppm("artifacts/image.ppm", r.image);
    run.ppm("artifacts/reference.ppm", reference);
    run.text("artifacts/message.txt", r.message.to_string() + "\n");
    run.text("artifacts/index_map.tsv", index_map_tsv(r.m_r));
    run.text("reports/generate.tsv", key_value_tsv({{"seed", std::to_string(seed)},
                                                    {"class", std::to_string(cond.id())},
                                                    {"guidance", num(w.scale)},
                                                    {"message", r.message.to_string()},
                                                    {"injection_mse", num(fidelity.mse)},
                                                    {"injection_psnr", num(fidelity.psnr)}}));
    run.finish(c, seed, checkpoint_hashes(checkpoint_dir(opt)),
               {{"class", cond.id()}, {"guidance", w.scale}});
    return 0;
}

// Reconstructs the ground-truth generation from a `generate` output, if present.
std::optional<GenerationRecord> truth_from(const fs::path& dir, const Models& models) {
    const auto a = dir / "artifacts";
    for (const char* f : {"z_T.rste", "z_0.rste", "z_r.rste", "z_0m.rste", "message.txt"})
        if (!fs::exists(a / f)) return std::nullopt;
    GenerationRecord r;
    r.z_T = Latent(io::load_tensor(a / "z_T.rste"));
    r.z_0 = Latent(io::load_tensor(a / "z_0.rste"));
    r.z_r = Latent(io::load_tensor(a / "z_r.rste"));
    r.z_0m = Latent(io::load_tensor(a / "z_0m.rste"));
    auto text = io::read_text(a / "message.txt");
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
    r.message = BitMessage::from_string(text);
    r.m_r = deserialize_indices(r.message, models.coder->codebook_size(), models.coder->grid_rows(),
                                models.coder->grid_cols());
    return r;
}

Image read_image(const fs::path& p) {
    if (p.extension() == ".ppm") return Image(io::load_ppm(p));
    return Image(io::load_tensor(p));
}

int cmd_recover(const Options& opt) {
    if (opt.in.empty()) throw ContractError("recover needs --in (a generate output directory or an image file)");
    const auto s = load_stack(opt);
    const auto& c = s.config();
    const auto models = s.models();
    const fs::path in(opt.in);
    const bool is_dir = fs::is_directory(in);
    const auto image_path = is_dir ? in / "artifacts" / "image.rste" : in;
    const auto image = read_image(image_path);
    const auto truth = is_dir ? truth_from(in, models) : std::nullopt;

    RecoveryOptions ro;
    ro.opt = c.latent_opt_config();
    if (opt.opt_steps) ro.opt.steps = *opt.opt_steps;
    ro.quantize_8bit = opt.quantize_8bit || c.latent_opt.quantize_8bit;
    const auto r = recover_starting_latent(image, models, ro, truth ? &*truth : nullptr);

    Run run("recover", opt);
    run.input(image_path);
    run.tensor("artifacts/z_em.rste", r.z_em);
    run.tensor("artifacts/z_em_opt.rste", r.z_em_opt);
    run.tensor("artifacts/z_er.rste", r.z_er);
    run.tensor("artifacts/z_T_star.rste", r.z_T_star);
    run.text("artifacts/message.txt", r.message.to_string() + "\n");
    run.text("artifacts/index_map.tsv", index_map_tsv(r.m_r));
    std::map<std::string, std::string> kv{{"message", r.message.to_string()}};
    for (const auto& [k, v] : r.diagnostics) kv[k] = num(v);
    run.text("reports/recover.tsv", key_value_tsv(kv));
    std::string hist = "step\tloss\n";
    for (std::size_t i = 0; i < r.opt_loss_history.size(); ++i)
        hist += std::to_string(i) + '\t' + num(r.opt_loss_history[i]) + '\n';
    run.text("reports/latent_opt.tsv", hist);
    run.finish(c, c.seed, checkpoint_hashes(checkpoint_dir(opt)),
               {{"opt_steps", ro.opt.steps}, {"quantize_8bit", ro.quantize_8bit}});
    return 0;
}

int cmd_edit(const Options& opt) {
    if (opt.in.empty()) throw ContractError("edit needs --in (a recover output directory or a latent file)");
    const auto s = load_stack(opt);
    const auto& c = s.config();
    const auto models = s.models();
    const fs::path in(opt.in);
    const auto latent_path = fs::is_directory(in) ? in / "artifacts" / "z_T_star.rste" : in;
    const Latent z(io::load_tensor(latent_path));
    const auto cond = class_of(opt, c);
    const auto w = guidance_of(opt, c.edit_guidance());
    const auto out = edit(z, cond, w, models);

    Run run("edit", opt);
    run.input(latent_path);
    run.tensor("artifacts/edited.rste", out);
    run.ppm("artifacts/edited.ppm", out);
    run.finish(c, c.seed, checkpoint_hashes(checkpoint_dir(opt)),
               {{"class", cond.id()}, {"guidance", w.scale}});
    return 0;
}

std::string steps_tsv(const std::vector<StepNorm>& steps) {
    std::string s = "t\tdrift_rms\testimation_rms\ttotal_rms\n";
    for (const auto& r : steps)
        s += std::to_string(r.t) + '\t' + num(r.drift_rms) + '\t' + num(r.estimation_rms) + '\t' + num(r.total_rms) + '\n';
    return s;
}

int cmd_diagnose(const Options& opt) {
    const auto s = load_stack(opt);
    const auto& c = s.config();
    Models models;
    models.denoiser = &s.denoiser();
    models.schedule = c.make_schedule();
    const auto seed = opt.seed.value_or(c.seed);
    const auto cond = class_of(opt, c);
    const auto w = guidance_of(opt, c.guidance.scale);
    const auto z_T = starting_latent(
        seed, Shape{c.geometry.latent_channels, c.geometry.latent_size, c.geometry.latent_size});
    const auto steps = step_error_norms(z_T, cond, w, models);

    Run run("diagnose", opt);
    run.text("reports/schedule.tsv", models.schedule.table());
    const auto table = steps_tsv(steps);
    run.text("reports/steps.tsv", table);
    std::cout << table;
    run.finish(c, seed, checkpoint_hashes(checkpoint_dir(opt)), {{"class", cond.id()}, {"guidance", w.scale}});
    return 0;
}

int cmd_compare(const Options& opt) {
    const auto s = load_stack(opt);
    const auto& c = s.config();
    const auto models = s.models();
    const auto base = opt.seed.value_or(c.seed);
    const auto w = guidance_of(opt, c.guidance.scale);
    const GuidanceConfig w_edit(opt.guidance.value_or(c.edit_guidance()));
    RecoveryOptions ro;
    ro.opt = c.latent_opt_config();
    if (opt.opt_steps) ro.opt.steps = *opt.opt_steps;
    ro.quantize_8bit = opt.quantize_8bit || c.latent_opt.quantize_8bit;
    if (opt.seeds < 1) throw ContractError("--seeds must be >= 1");

    std::string rows = "seed\tclass\tmethod\tlatent_mse\treplay_mse\treplay_psnr\n";
    std::map<std::string, std::vector<double>> latent, replay;
    for (std::int64_t i = 0; i < opt.seeds; ++i) {
        const auto seed = base + static_cast<std::uint64_t>(i);
        const auto cond = opt.cls ? class_of(opt, c) : Condition(i % c.dataset.classes);
        const auto rec = generate_with_embedding(seed, cond, w, models);
        const auto rep = compare_baseline(rec, models, ro, w_edit);
        for (const auto& r : rep.rows) {
            rows += std::to_string(seed) + '\t' + std::to_string(cond.id()) + '\t' + r.method + '\t' + num(r.latent_mse) +
                    '\t' + num(r.replay_mse) + '\t' + num(r.replay_psnr) + '\n';
            latent[r.method].push_back(r.latent_mse);
            replay[r.method].push_back(r.replay_psnr);
        }
        log_line("compare: seed " + std::to_string(seed) + " done");
    }
    std::string summary = "method\tmedian_latent_mse\tmedian_replay_psnr\n";
    for (const auto& [m, v] : latent) summary += m + '\t' + num(median(v)) + '\t' + num(median(replay[m])) + '\n';

    // Median per-step drift along the generation trajectory at increasing guidance.
    std::vector<float> scales{0.0f, 2.0f};
    if (w.scale > 2.0f) scales.push_back(w.scale);
    std::string drift = "guidance\tmedian_drift_rms\tmedian_estimation_rms\n";
    const auto z_T = starting_latent(base, models.pixel->latent_shape());
    for (const float g : scales) {
        const auto steps = step_error_norms(z_T, Condition(0), GuidanceConfig(g), models);
        std::vector<double> d, e;
        for (const auto& r : steps) {
            d.push_back(r.drift_rms);
            e.push_back(r.estimation_rms);
        }
        drift += num(g) + '\t' + num(median(d)) + '\t' + num(median(e)) + '\n';
    }

    Run run("compare", opt);
    run.text("reports/compare.tsv", rows);
    run.text("reports/compare_summary.tsv", summary);
    run.text("reports/drift_by_guidance.tsv", drift);
    std::cout << summary << '\n' << drift;
    run.finish(c, base, checkpoint_hashes(checkpoint_dir(opt)),
               {{"seeds", opt.seeds}, {"guidance", w.scale}, {"opt_steps", ro.opt.steps}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"resetedit: resettable starting latents for diffusion editing (desk-scale stack)"};
    app.require_subcommand(1);
    Options opt;

    auto common = [&](CLI::App* sub, bool trains) {
        sub->add_option("--config", opt.config_path, "JSON config file")->check(CLI::ExistingFile);
        sub->add_option("--seed", opt.seed, trains ? "config seed override" : "generation seed");
        sub->add_option("--out", opt.out, "output directory")->capture_default_str();
        if (!trains) sub->add_option("--checkpoints", opt.checkpoints, "checkpoint directory (default OUT/checkpoints)");
    };

    auto* ds = app.add_subcommand("dataset", "render the synthetic dataset");
    common(ds, true);
    ds->add_option("--count", opt.count, "images to export")->capture_default_str();

    std::vector<std::pair<CLI::App*, std::string>> trains;
    for (const char* stage : {"vae", "denoiser", "codec", "injector", "all"}) {
        auto* t = app.add_subcommand(std::string("train-") + stage, std::string(stage) == "all" ? "train all four stages in order" : std::string("train the ") + stage + " stage");
        common(t, true);
        t->add_flag("--resume", opt.resume, "keep stages that already have a checkpoint");
        trains.emplace_back(t, stage);
    }

    auto* gen = app.add_subcommand("generate", "sample an image with the residual embedded");
    auto* rec = app.add_subcommand("recover", "recover the starting latent from an image");
    auto* ed = app.add_subcommand("edit", "regenerate from a recovered latent under a new class");
    auto* diag = app.add_subcommand("diagnose", "per-step drift/estimation error norms and the schedule table");
    auto* cmp = app.add_subcommand("compare", "compare against plain DDIM inversion over several seeds");
    for (auto* sub : {gen, rec, ed, diag, cmp}) common(sub, false);
    for (auto* sub : {gen, ed, diag, cmp}) {
        sub->add_option("--guidance", opt.guidance, "guidance scale");
        sub->add_option("--class", opt.cls, "class id");
    }
    for (auto* sub : {rec, ed}) sub->add_option("--in", opt.in, "input directory or file");
    for (auto* sub : {rec, cmp}) {
        sub->add_option("--steps", opt.opt_steps, "latent optimization steps");
        sub->add_flag("--quantize-8bit", opt.quantize_8bit, "round the image to 8-bit pixels before recovery");
    }
    cmp->add_option("--seeds", opt.seeds, "number of seeds")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        if (code != 0 && !app.get_subcommands().empty()) return 1;
        if (code != 0) std::cerr << app.help();
        return code == 0 ? 0 : 1;
    }

    try {
        if (ds->parsed()) return cmd_dataset(opt);
        for (const auto& [sub, stage] : trains)
            if (sub->parsed()) return cmd_train(opt, stage);
        if (gen->parsed()) return cmd_generate(opt);
        if (rec->parsed()) return cmd_recover(opt);
        if (ed->parsed()) return cmd_edit(opt);
        if (diag->parsed()) return cmd_diagnose(opt);
        if (cmp->parsed()) return cmd_compare(opt);
    } catch (const TrainingError& e) {
        std::cerr << "training diverged: " << e.what() << '\n';
        return 2;
    } catch (const OptimizationError& e) {
        std::cerr << "latent optimization diverged: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

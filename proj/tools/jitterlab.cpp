// jitterlab command-line front end.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure,
// 4 file or format failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "jitterlab/adapt.hpp"
#include "jitterlab/checkpoint.hpp"
#include "jitterlab/dataset_io.hpp"
#include "jitterlab/synthdata.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace jitterlab;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string fmt9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Every option of a subcommand with its effective value, in declaration order.
json config_echo(const CLI::App& sub) {
  json c = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const auto name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    const auto& res = opt->results();
    if (opt->get_expected_max() > 1) {
      json arr = json::array();
      for (const auto& r : res) arr.push_back(r);
      c[name] = arr;
    } else if (!res.empty()) {
      c[name] = res.back();
    } else {
      c[name] = opt->get_default_str();
    }
  }
  return c;
}

json report_header(const CLI::App& sub) {
  json r;
  r["command"] = sub.get_name();
  r["version"] = kVersion;
  r["config"] = config_echo(sub);
  return r;
}

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

fs::path manifest_path(const std::string& p) {
  fs::path m(p);
  if (fs::is_directory(m)) m /= "manifest.csv";
  if (!fs::exists(m)) throw IoError("dataset manifest not found: " + m.string());
  return m;
}

json metrics_json(const EvalReport& r) {
  json j;
  j["samples"] = r.samples;
  j["mean_angular_error_deg"] = r.mean_angular_error_deg;
  if (r.mav) {
    j["mav_deg"] = r.mav->mav_deg;
    j["qualifying_pairs"] = r.mav->qualifying_pairs;
    j["candidates_scanned"] = r.mav->candidates_scanned;
  } else {
    j["mav_deg"] = nullptr;
    j["qualifying_pairs"] = 0;
    j["mav_unavailable_reason"] = r.mav_unavailable_reason;
  }
  return j;
}

std::string csv_metrics(const EvalReport& r) {
  std::string s = fmt9(r.mean_angular_error_deg) + ",";
  s += r.mav ? fmt9(r.mav->mav_deg) + "," + std::to_string(r.mav->qualifying_pairs) : std::string(",0");
  return s;
}

// ---------------------------------------------------------------------------
// Option groups shared between subcommands

struct MavOptions {
  MavConfig cfg;
  void add(CLI::App* sub) {
    sub->add_option("--alpha", cfg.alpha, "SSIM threshold for mav pairs")->capture_default_str();
    sub->add_option("--beta", cfg.beta_deg, "label angle threshold for mav pairs, degrees")->capture_default_str();
    sub->add_option("--max-pairs", cfg.max_pairs, "subsample at most this many pairs (0 = all)")->capture_default_str();
  }
};

struct AttackOptions {
  AttackConfig cfg;
  void add(CLI::App* sub) {
    sub->add_option("--epsilon", cfg.epsilon, "L-inf perturbation radius")->capture_default_str();
    sub->add_option("--pgd-steps", cfg.pgd_steps, "PGD iterations")->capture_default_str();
    sub->add_option("--pgd-step-size", cfg.pgd_step_size, "PGD step size")->capture_default_str();
  }
};

void add_seed(CLI::App* sub, std::uint64_t& seed) {
  sub->add_option("--seed", seed, "random seed (falls back to JITTERLAB_SEED)")
      ->envname("JITTERLAB_SEED")
      ->capture_default_str();
}

// ---------------------------------------------------------------------------
// Commands

struct SynthArgs {
  std::string out;
  std::string domain = "source";
  std::size_t n = 1000;
  std::size_t dup_groups = 0;
  std::uint64_t seed = 0;
  double hfc_amp = -1, hfc_freq = -1, noise_var = -1;
};

void cmd_synth(const SynthArgs& a) {
  auto spec = parse_domain(a.domain) == Domain::source ? DomainSpec::source() : DomainSpec::target();
  if (a.hfc_amp >= 0) spec.hfc_amplitude = a.hfc_amp;
  if (a.hfc_freq >= 0) spec.hfc_frequency = a.hfc_freq;
  if (a.noise_var >= 0) spec.sensor_noise_variance = a.noise_var;
  const auto ds = generate_dataset(a.n, spec, a.dup_groups, a.seed);
  save_dataset(a.out, ds);
}

struct PretrainArgs {
  std::string data, out;
  PretrainConfig cfg;
};

void cmd_pretrain(const PretrainArgs& a) {
  const auto ds = load_dataset(manifest_path(a.data));
  const auto r = pretrain(ds, a.cfg);
  save_checkpoint(a.out, make_checkpoint(r.model, nullptr, a.cfg.seed, r.loss_trace.size()));
}

struct AdaptArgs {
  std::string model, source, target, out, trace;
  std::size_t n_source = 100, n_target = 100;
  AdaptConfig cfg;
  AttackOptions attack;
};

void cmd_adapt(const AdaptArgs& a) {
  const auto base = gaze_model_from(load_checkpoint(a.model));
  auto src = load_dataset(manifest_path(a.source));
  auto tgt = load_dataset(manifest_path(a.target));
  if (src.size() < a.n_source || tgt.size() < a.n_target)
    throw ConfigError("adapt: manifests hold fewer samples than --n-source/--n-target");
  src = src.slice(0, a.n_source);
  tgt = tgt.slice(0, a.n_target);
  auto cfg = a.cfg;
  cfg.attack = a.attack.cfg;
  const auto r = adapt(base, src, tgt, cfg);
  auto ck = make_checkpoint(r.model, &r.discriminator, cfg.seed, cfg.iters);
  ck.metadata["lambda1"] = fmt9(cfg.weights.lambda1);
  ck.metadata["lambda2"] = fmt9(cfg.weights.lambda2);
  ck.metadata["epsilon"] = fmt9(cfg.attack.epsilon);
  save_checkpoint(a.out, ck);
  if (!a.trace.empty()) {
    std::string csv = "iter,gaze,contrastive,adversarial,discriminator,total,d_confidence\n";
    for (std::size_t i = 0; i < r.trace.size(); ++i) {
      const auto& t = r.trace[i];
      csv += std::to_string(i + 1) + "," + fmt9(t.gaze) + "," + fmt9(t.contrastive) + "," + fmt9(t.adversarial) + "," +
             fmt9(t.discriminator) + "," + fmt9(t.total) + "," + fmt9(t.d_confidence) + "\n";
    }
    write_file_atomic(a.trace, csv);
  }
}

struct EvalArgs {
  std::string model, data, out;
  std::uint64_t seed = 0;
  MavOptions mav;
};

void cmd_eval(const EvalArgs& a, const CLI::App& sub) {
  const auto m = gaze_model_from(load_checkpoint(a.model));
  const auto ds = load_dataset(manifest_path(a.data));
  auto cfg = a.mav.cfg;
  cfg.seed = a.seed;
  auto r = report_header(sub);
  const auto metrics = metrics_json(evaluate(m, ds, cfg));
  for (const auto& [k, v] : metrics.items()) r[k] = v;
  write_json(a.out, r);
}

struct SweepArgs {
  std::string kind, noise = "gaussian", model, data, out;
  std::uint64_t seed = 0;
  MavOptions mav;
};

// Pairs are selected once on the clean images; each row only changes the
// model inputs.
void cmd_sweep(const SweepArgs& a) {
  const auto m = gaze_model_from(load_checkpoint(a.model));
  const auto ds = load_dataset(manifest_path(a.data));
  auto cfg = a.mav.cfg;
  cfg.seed = a.seed;
  const auto pairs = qualifying_pairs(ds.images, ds.labels, cfg);
  std::string csv = "param,value,mean_angular_error_deg,mav_deg,qualifying_pairs\n";
  auto row = [&](const std::string& param, double value, const std::vector<Image>& inputs) {
    const auto r = evaluate(m, ds, cfg, &pairs, inputs);
    csv += param + "," + fmt9(value) + "," + csv_metrics(r) + "\n";
  };
  if (a.kind == "lowpass") {
    for (int k = 0; k <= 10; ++k) row("lowpass_fraction", k / 10.0, lowpass_images(ds, k / 10.0));
  } else if (a.noise == "gaussian") {
    for (double v : {0.0, 0.005, 0.01, 0.02, 0.05})
      row("gaussian_variance", v, noisy_images(ds, {NoiseKind::gaussian, v}, a.seed));
  } else {
    for (double s : {10.0, 15.0}) row("poisson_scale", s, noisy_images(ds, {NoiseKind::poisson, s}, a.seed));
  }
  write_file_atomic(a.out, csv);
}

struct CompareArgs {
  std::string baseline, adapted, data, out;
  std::uint64_t seed = 0;
  MavOptions mav;
};

json with_deltas(json noisy, const json& clean) {
  noisy["error_delta_deg"] = noisy["mean_angular_error_deg"].get<double>() - clean["mean_angular_error_deg"].get<double>();
  if (noisy["mav_deg"].is_null() || clean["mav_deg"].is_null())
    noisy["mav_delta_deg"] = nullptr;
  else
    noisy["mav_delta_deg"] = noisy["mav_deg"].get<double>() - clean["mav_deg"].get<double>();
  return noisy;
}

void cmd_robustness(const CompareArgs& a, const CLI::App& sub) {
  const auto base = gaze_model_from(load_checkpoint(a.baseline));
  const auto adapted = gaze_model_from(load_checkpoint(a.adapted));
  const auto ds = load_dataset(manifest_path(a.data));
  auto cfg = a.mav.cfg;
  cfg.seed = a.seed;
  const auto pairs = qualifying_pairs(ds.images, ds.labels, cfg);
  auto r = report_header(sub);
  const json clean_b = metrics_json(evaluate(base, ds, cfg, &pairs));
  const json clean_a = metrics_json(evaluate(adapted, ds, cfg, &pairs));
  r["clean"] = {{"baseline", clean_b}, {"adapted", clean_a}};
  json settings = json::array();
  const std::vector<NoiseSetting> noise{{NoiseKind::gaussian, 0.01},
                                        {NoiseKind::gaussian, 0.05},
                                        {NoiseKind::poisson, 10.0},
                                        {NoiseKind::poisson, 15.0}};
  for (const auto& n : noise) {
    const auto inputs = noisy_images(ds, n, a.seed);
    json s;
    s["noise"] = n.kind == NoiseKind::gaussian ? "gaussian" : "poisson";
    s["param"] = n.param;
    s["baseline"] = with_deltas(metrics_json(evaluate(base, ds, cfg, &pairs, inputs)), clean_b);
    s["adapted"] = with_deltas(metrics_json(evaluate(adapted, ds, cfg, &pairs, inputs)), clean_a);
    settings.push_back(s);
  }
  r["settings"] = settings;
  write_json(a.out, r);
}

void cmd_retention(const CompareArgs& a, const CLI::App& sub) {
  const auto base = gaze_model_from(load_checkpoint(a.baseline));
  const auto adapted = gaze_model_from(load_checkpoint(a.adapted));
  const auto ds = load_dataset(manifest_path(a.data));
  auto cfg = a.mav.cfg;
  cfg.seed = a.seed;
  const auto pairs = qualifying_pairs(ds.images, ds.labels, cfg);
  auto r = report_header(sub);
  const json b = metrics_json(evaluate(base, ds, cfg, &pairs));
  const json ad = metrics_json(evaluate(adapted, ds, cfg, &pairs));
  r["baseline"] = b;
  r["adapted"] = ad;
  const double eb = b["mean_angular_error_deg"], ea = ad["mean_angular_error_deg"];
  r["error_relative_change"] = (ea - eb) / eb;
  if (b["mav_deg"].is_null() || ad["mav_deg"].is_null())
    r["mav_relative_change"] = nullptr;
  else
    r["mav_relative_change"] = (ad["mav_deg"].get<double>() - b["mav_deg"].get<double>()) / b["mav_deg"].get<double>();
  write_json(a.out, r);
}

struct ProbeArgs {
  std::vector<std::string> models;
  std::string data, out;
  std::size_t triples = 1000;
  std::uint64_t seed = 0;
  AttackOptions attack;
};

// Adversarial twins are crafted against each probed model with the
// ground-truth labels of the evaluation set.
void cmd_probe_triplet(const ProbeArgs& a) {
  const auto ds = load_dataset(manifest_path(a.data));
  std::string csv = "model,margin,triplet_loss,n_triples\n";
  for (const auto& path : a.models) {
    const auto m = gaze_model_from(load_checkpoint(path));
    const auto adv = augment_batch(m, ds.images, ds.labels, a.attack.cfg, derive_seed(a.seed, seeds::kCoins));
    const auto f = m.features_all(ds.images);
    const auto fa = m.features_all(adv.images);
    for (double margin : {0.0, 1e-3}) {
      const double l = triplet_probe(f, fa, margin, a.triples, a.seed);
      csv += fs::path(path).stem().string() + "," + fmt9(margin) + "," + fmt9(l) + "," + std::to_string(a.triples) +
             "\n";
    }
  }
  write_file_atomic(a.out, csv);
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return 3;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const ParseError*>(&e)) return 4;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return 4;
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaze jitter analysis and domain adaptation on synthetic eye images"};
  app.set_config("--config", "", "TOML-style configuration file; command-line flags take precedence");
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "render a synthetic dataset with a manifest");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--domain", synth.domain, "source or target")
      ->check(CLI::IsMember({"source", "target"}))
      ->capture_default_str();
  s->add_option("--n", synth.n, "number of images")->capture_default_str();
  s->add_option("--dup-groups", synth.dup_groups, "near-duplicate groups of three")->capture_default_str();
  add_seed(s, synth.seed);
  s->add_option("--hfc-amp", synth.hfc_amp, "override grating amplitude");
  s->add_option("--hfc-freq", synth.hfc_freq, "override grating frequency, cycles per image");
  s->add_option("--noise-var", synth.noise_var, "override sensor noise variance");

  PretrainArgs pre;
  auto* p = app.add_subcommand("pretrain", "supervised training on a labelled source set");
  p->add_option("--data", pre.data, "source manifest or directory")->required();
  p->add_option("--out", pre.out, "checkpoint path")->required();
  p->add_option("--epochs", pre.cfg.epochs)->capture_default_str();
  p->add_option("--batch", pre.cfg.batch)->capture_default_str();
  p->add_option("--lr", pre.cfg.lr)->capture_default_str();
  add_seed(p, pre.cfg.seed);

  AdaptArgs ad;
  auto* a = app.add_subcommand("adapt", "unsupervised adaptation of a pretrained model");
  a->add_option("--model", ad.model, "pretrained checkpoint")->required();
  a->add_option("--source", ad.source, "labelled source manifest")->required();
  a->add_option("--target", ad.target, "unlabelled target manifest")->required();
  a->add_option("--out", ad.out, "adapted checkpoint path")->required();
  a->add_option("--trace", ad.trace, "optional per-iteration loss CSV");
  a->add_option("--n-source", ad.n_source)->capture_default_str();
  a->add_option("--n-target", ad.n_target)->capture_default_str();
  a->add_option("--iters", ad.cfg.iters)->capture_default_str();
  a->add_option("--batch", ad.cfg.batch)->capture_default_str();
  a->add_option("--lambda1", ad.cfg.weights.lambda1, "contrastive weight")->capture_default_str();
  a->add_option("--lambda2", ad.cfg.weights.lambda2, "adversarial weight")->capture_default_str();
  a->add_option("--tau", ad.cfg.weights.tau, "contrastive temperature")->capture_default_str();
  a->add_option("--lr-g", ad.cfg.lr_g)->capture_default_str();
  a->add_option("--lr-d", ad.cfg.lr_d)->capture_default_str();
  ad.attack.add(a);
  add_seed(a, ad.cfg.seed);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "error and mav of a model on a dataset");
  e->add_option("--model", ev.model)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--out", ev.out, "JSON report path")->required();
  ev.mav.add(e);
  add_seed(e, ev.seed);

  SweepArgs sw;
  auto* w = app.add_subcommand("sweep", "error and mav under lowpass filtering or added noise");
  w->add_option("kind", sw.kind, "lowpass or noise")->required()->check(CLI::IsMember({"lowpass", "noise"}));
  w->add_option("--noise", sw.noise, "gaussian or poisson")
      ->check(CLI::IsMember({"gaussian", "poisson"}))
      ->capture_default_str();
  w->add_option("--model", sw.model)->required();
  w->add_option("--data", sw.data)->required();
  w->add_option("--out", sw.out, "CSV path")->required();
  sw.mav.add(w);
  add_seed(w, sw.seed);

  CompareArgs rob;
  auto* r = app.add_subcommand("robustness", "baseline vs adapted model under test-time noise");
  r->add_option("--baseline", rob.baseline)->required();
  r->add_option("--adapted", rob.adapted)->required();
  r->add_option("--data", rob.data, "target evaluation manifest")->required();
  r->add_option("--out", rob.out, "JSON report path")->required();
  rob.mav.add(r);
  add_seed(r, rob.seed);

  CompareArgs ret;
  auto* t = app.add_subcommand("retention", "baseline vs adapted model on the source domain");
  t->add_option("--baseline", ret.baseline)->required();
  t->add_option("--adapted", ret.adapted)->required();
  t->add_option("--data", ret.data, "source test manifest")->required();
  t->add_option("--out", ret.out, "JSON report path")->required();
  ret.mav.add(t);
  add_seed(t, ret.seed);

  ProbeArgs pr;
  auto* q = app.add_subcommand("probe-triplet", "triplet loss between original and adversarial features");
  q->add_option("--model", pr.models, "checkpoint (repeatable)")->required();
  q->add_option("--data", pr.data)->required();
  q->add_option("--out", pr.out, "CSV path")->required();
  q->add_option("--triples", pr.triples)->capture_default_str();
  pr.attack.add(q);
  add_seed(q, pr.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : 2;
  }

  const auto start = std::chrono::steady_clock::now();
  try {
    if (*s) cmd_synth(synth);
    if (*p) cmd_pretrain(pre);
    if (*a) cmd_adapt(ad);
    if (*e) cmd_eval(ev, *e);
    if (*w) cmd_sweep(sw);
    if (*r) cmd_robustness(rob, *r);
    if (*t) cmd_retention(ret, *t);
    if (*q) cmd_probe_triplet(pr);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return exit_code(ex);
  }
  const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
  std::cerr << app.get_subcommands().front()->get_name() << " finished in " << fmt9(took.count()) << " s\n";
  return 0;
}

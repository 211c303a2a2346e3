#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "agediff/diffusion.hpp"
#include "agediff/editing.hpp"
#include "agediff/evaluation.hpp"
#include "agediff/gradcheck.hpp"
#include "agediff/io.hpp"
#include "agediff/tape.hpp"
#include "agediff/training.hpp"

namespace fs = std::filesystem;
using namespace agediff;

namespace {

// Relative output directories resolve under AGEDIFF_OUT_ROOT when it is set.
std::string resolve_out(const std::string& dir) {
  const char* root = std::getenv("AGEDIFF_OUT_ROOT");
  if (root == nullptr || *root == '\0') return dir;
  fs::path p(dir);
  if (p.is_absolute()) return dir;
  return (fs::path(root) / p).string();
}

std::string prepare_out(const std::string& dir) {
  const std::string out = resolve_out(dir);
  fs::create_directories(out);
  return out;
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

RunManifest start_manifest(const std::string& command, uint64_t seed,
                           const std::string& config_digest = "") {
  RunManifest m;
  m.command = command;
  m.seed = seed;
  m.config_digest = config_digest;
  m.started = timestamp_utc();
  return m;
}

void finish_manifest(RunManifest& m, const std::string& out_dir) {
  m.finished = timestamp_utc();
  write_run_manifest(join(out_dir, "run.json"), m);
}

FaceSpec read_spec_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": bad spec file: " + e.what());
  }
  FaceSpec spec;
  const auto& u = j.at("u");
  if (!u.is_array() || u.size() != 8)
    throw ValueError(path + ": field 'u' must hold 8 numbers");
  for (size_t i = 0; i < 8; ++i) spec.u[i] = u[i].get<double>();
  spec.age = j.at("age").get<int>();
  spec.noise_key = j.value("noise_key", 0ull);
  return spec;
}

TrainConfig config_for_model(const std::string& config_path, const Model& model) {
  TrainConfig cfg;
  if (!config_path.empty()) {
    cfg = TrainConfig::from_json_file(config_path);
  } else {
    cfg.T = model.T;
    cfg.sampler_steps = std::min(cfg.sampler_steps, cfg.T);
  }
  cfg.validate();
  if (cfg.T != model.T)
    throw ConfigError("config T=" + std::to_string(cfg.T) + " but checkpoint T=" +
                      std::to_string(model.T));
  return cfg;
}

int cmd_gen_data(int n, uint64_t seed, const std::string& dist,
                 const std::string& out_dir) {
  const std::string out = prepare_out(out_dir);
  RunManifest m = start_manifest("gen-data", seed);
  auto records = generate_dataset(n, seed, dist);
  DatasetMeta meta;
  meta.n = n;
  meta.seed = seed;
  meta.distribution = dist;
  m.dataset_manifest = save_dataset(out, records, meta);
  for (const char* name : {"images.agt", "e_id.agt", "e_age.agt", "u.agt",
                           "caption.agt", "age_phrase.agt", "age.agt",
                           "noise_key.agt", "manifest.json"})
    m.add_output(join(out, name));
  finish_manifest(m, out);
  std::cout << "wrote " << n << " records to " << out << "\n";
  return 0;
}

int cmd_build_codebook(const std::string& data_dir, const std::string& out_dir) {
  const std::string out = prepare_out(out_dir);
  LoadedDataset ds = load_dataset(resolve_out(data_dir));
  RunManifest m = start_manifest("build-codebook", ds.meta.seed);
  m.dataset_manifest = ds.manifest_digest;
  AgeCodebook cb = build_codebook(ds.records);
  const std::string path = join(out, "codebook.json");
  cb.save(path);
  m.add_output(path);
  finish_manifest(m, out);
  std::cout << "codebook covers " << cb.ages().size() << " ages\n";
  return 0;
}

int cmd_train_probe(const std::string& data_dir, const std::string& out_dir) {
  const std::string out = prepare_out(out_dir);
  LoadedDataset ds = load_dataset(resolve_out(data_dir));
  RunManifest m = start_manifest("train-probe", ds.meta.seed);
  m.dataset_manifest = ds.manifest_digest;

  AgeProbe probe = train_age_probe(ds.records);
  const std::string probe_path = join(out, "age_probe.agck");
  save_age_probe(probe_path, probe);
  m.add_output(probe_path);
  std::cout << "age probe val mae " << probe.val_mae << "\n";

  IdentityEncoder enc = train_identity_encoder(ds.records, EncoderTrainConfig{});
  const std::string enc_path = join(out, "identity_encoder.agck");
  save_identity_encoder(enc_path, enc);
  m.add_output(enc_path);
  std::cout << "identity encoder val mse " << enc.val_mse << ", cross-id mean "
            << enc.calib_mean << " std " << enc.calib_std << "\n";

  finish_manifest(m, out);
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& codebook_path, const std::string& probe_path,
              const std::string& init_path, const std::string& out_dir) {
  TrainConfig cfg = TrainConfig::from_json_file(config_path);
  if (!init_path.empty()) cfg.init_checkpoint = init_path;
  cfg.validate();
  if (cfg.stage == "II" && cfg.init_checkpoint.empty() && !cfg.joint_from_scratch)
    throw ConfigError(
        "stage II continues a stage I run: pass --init or set joint_from_scratch");
  const bool wants_probe = cfg.stage == "II" && cfg.enable_acg && cfg.lambda > 0.0 &&
                           cfg.acg_target == "probe";
  if (wants_probe && probe_path.empty())
    throw ConfigError("stage II with probe guidance needs --probe");

  const std::string out = prepare_out(out_dir);
  LoadedDataset ds = load_dataset(resolve_out(data_dir));
  AgeCodebook cb = AgeCodebook::load(codebook_path);

  AgeProbe probe;
  const AgeProbe* probe_ptr = nullptr;
  if (!probe_path.empty()) {
    probe = load_age_probe(probe_path);
    probe_ptr = &probe;
  }

  Model model = cfg.init_checkpoint.empty() ? Model::init(cfg.T, cfg.seed)
                                            : load_model(cfg.init_checkpoint);
  RunManifest m = start_manifest("train", cfg.seed, cfg.digest());
  m.dataset_manifest = ds.manifest_digest;

  std::ofstream log(join(out, "loss.log"));
  TrainResult res = train_model(model, ds.records, cb, probe_ptr, cfg, &log);
  log.close();

  const std::string model_path = join(out, "model.agck");
  save_model(model_path, model);
  m.add_output(model_path);
  m.add_output(join(out, "loss.log"));
  finish_manifest(m, out);
  const TrainLogEntry& last = res.log.back();
  std::cout << "stage " << cfg.stage << " done: " << format_log_entry(last) << "\n";
  return 0;
}

int cmd_edit(const std::string& ckpt_path, const std::string& codebook_path,
             const std::string& spec_path, int target_age, double id_scale,
             double age_scale, double cage_scale, uint64_t seed,
             const std::string& config_path, const std::string& out_dir) {
  const std::string out = prepare_out(out_dir);
  Model model = load_model(ckpt_path);
  AgeCodebook cb = AgeCodebook::load(codebook_path);
  FaceSpec spec = read_spec_file(spec_path);
  TrainConfig cfg = config_for_model(config_path, model);

  RunManifest m = start_manifest("edit", seed, cfg.digest());
  EditScales scales;
  scales.id = id_scale;
  scales.age = age_scale;
  scales.cage = cage_scale;

  Tensor source = render_face(spec);
  Rng rng = Rng::derive(seed, {0xed17});
  Tensor edited = edit_age(model, cb, extract_id_embedding(spec), target_age, scales,
                           cfg, rng, nullptr);

  write_pgm(join(out, "source.pgm"), source);
  write_pgm(join(out, "edited.pgm"), edited);
  const AgeEstimate est = oracle_age(edited);
  nlohmann::json j;
  j["target_age"] = target_age;
  j["source_age"] = spec.age;
  j["oracle_age"] = est.age;
  j["scales"] = {{"id", scales.id}, {"age", scales.age}, {"cage", scales.cage}};
  {
    std::ofstream f(join(out, "edit.json"));
    f << j.dump(2) << "\n";
  }
  for (const char* name : {"source.pgm", "edited.pgm", "edit.json"})
    m.add_output(join(out, name));
  finish_manifest(m, out);
  std::cout << "target " << target_age << ", oracle reads " << est.age << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& codebook_path,
             const std::string& encoder_path, int n_specs, uint64_t seed,
             const std::string& config_path, const std::string& out_dir) {
  const std::string out = prepare_out(out_dir);
  Model model = load_model(ckpt_path);
  AgeCodebook cb = AgeCodebook::load(codebook_path);
  IdentityEncoder enc = load_identity_encoder(encoder_path);
  TrainConfig cfg = config_for_model(config_path, model);

  RunManifest m = start_manifest("eval", seed, cfg.digest());
  auto specs = make_test_specs(n_specs, seed);
  EvalArtifacts art;
  EvalReport rep =
      evaluate_editing(model, cb, enc, specs, default_targets(), cfg, seed, &art);

  // One grid row per target age, sources on top.
  std::vector<std::vector<Tensor>> rows;
  const size_t grid_cols = std::min<size_t>(art.sources.size(), 10);
  rows.push_back({art.sources.begin(), art.sources.begin() + grid_cols});
  for (const auto& edits : art.edits)
    rows.push_back({edits.begin(), edits.begin() + grid_cols});
  const std::string grid_path = join(out, "grid.pgm");
  write_pgm_grid(grid_path, rows);
  rep.grid_files = {"grid.pgm"};

  const std::string report_path = join(out, "report.json");
  export_report(rep, report_path);
  m.add_output(report_path);
  m.add_output(grid_path);
  finish_manifest(m, out);
  std::cout << format_report_table({{"model", rep}});
  return 0;
}

int cmd_ablate(const std::string& stage1_path, const std::string& stage2_path,
               const std::string& data_dir, const std::string& codebook_path,
               const std::string& probe_path, const std::string& encoder_path,
               int n_specs, uint64_t seed, const std::string& out_dir) {
  TrainConfig c1 = TrainConfig::from_json_file(stage1_path);
  TrainConfig c2 = TrainConfig::from_json_file(stage2_path);
  c1.validate();
  c2.validate();
  if (c1.stage != "I" || c2.stage != "II")
    throw ConfigError("ablate wants a stage I config and a stage II config");

  const std::string out = prepare_out(out_dir);
  LoadedDataset ds = load_dataset(resolve_out(data_dir));
  AgeCodebook cb = AgeCodebook::load(codebook_path);
  AgeProbe probe = load_age_probe(probe_path);
  IdentityEncoder enc = load_identity_encoder(encoder_path);

  RunManifest m = start_manifest("ablate", seed, c2.digest());
  m.dataset_manifest = ds.manifest_digest;
  auto specs = make_test_specs(n_specs, seed);
  AblationTable table = run_ablations(c1, c2, ds.records, cb, probe, enc, specs,
                                      default_targets(), &std::cout);

  nlohmann::json j = nlohmann::json::array();
  for (const auto& row : table.rows) {
    nlohmann::json r;
    r["name"] = row.name;
    r["avg_mae"] = row.report.avg_mae;
    r["mean_similarity"] = row.report.mean_similarity;
    r["per_target_mae"] = row.report.per_target_mae;
    j.push_back(r);
  }
  const std::string table_json = join(out, "ablation.json");
  {
    std::ofstream f(table_json);
    f << j.dump(2) << "\n";
  }
  const std::string table_txt = join(out, "ablation.txt");
  {
    std::ofstream f(table_txt);
    f << format_report_table(table.rows);
  }
  m.add_output(table_json);
  m.add_output(table_txt);
  finish_manifest(m, out);
  std::cout << format_report_table(table.rows);
  return 0;
}

int cmd_grad_check(int probes, uint64_t seed) {
  Rng rng(seed);
  const int T = 6;
  DenoiserParamsT<double> dp = DenoiserParamsT<double>::init(T, rng);
  CondProjParamsT<double> cp = CondProjParamsT<double>::init(rng);
  ACGHeadT<double> head = ACGHeadT<double>::init(T, rng);
  for (auto& v : dp.w_out.mutable_values()) v = rng.normal() * 0.05;

  auto data = generate_dataset(4, seed + 1, "balanced");
  AgeCodebook cb = build_codebook(data);
  ConditionBundleT<double> bundle;
  bundle.caption = data[0].caption;
  bundle.age_phrase = data[0].age_phrase;
  bundle.e_id = cast<double>(data[0].e_id);
  bundle.e_age = cast<double>(
      Tensor::from_values({1, kEmbedDim}, cb.entry(data[0].age)));
  bundle.age = data[0].age;

  TensorT<double> z0 = cast<double>(data[0].image);
  TensorT<double> eps = TensorT<double>::randn(z0.shape(), rng);
  const DiffusionSchedule sched = make_schedule(T, "linear", 1e-2, 0.2);
  const int t = 4;

  std::vector<TensorT<double>> params;
  for (auto& p : dp.params()) params.push_back(p);
  for (auto& p : cp.params()) params.push_back(p);
  for (auto& p : head.params()) params.push_back(p);

  auto loss_fn = [&]() {
    auto cond = project_conditions(cp, bundle);
    TensorT<double> z_t = forward_diffuse(z0, t, sched, eps);
    TensorT<double> eps_hat = denoise(dp, z_t, t, cond);
    TensorT<double> l_diff = diffusion_loss(eps_hat, eps);
    TensorT<double> pred = acg_forward(head, z_t, eps_hat, t);
    TensorT<double> l_age = age_guidance_loss(pred, 40.0);
    return total_loss(l_diff, l_age, 0.05);
  };
  Rng probe_rng(seed + 2);
  auto rep = grad_check<double>(loss_fn, params, 1e-5, 1e-4, probes, probe_rng);
  std::cout << "probes " << rep.probes << ", max rel err " << rep.max_rel_err << "\n";
  if (!rep.pass) {
    std::cout << "worst: param " << rep.worst_param << " coord " << rep.worst_coord
              << " analytic " << rep.worst_analytic << " numeric "
              << rep.worst_numeric << "\n";
    return 1;
  }
  return 0;
}

int cmd_attn_dump(const std::string& ckpt_path, const std::string& codebook_path,
                  int n_specs, uint64_t seed, const std::string& config_path,
                  const std::string& out_dir) {
  const std::string out = prepare_out(out_dir);
  Model model = load_model(ckpt_path);
  AgeCodebook cb = AgeCodebook::load(codebook_path);
  TrainConfig cfg = config_for_model(config_path, model);

  RunManifest m = start_manifest("attn-dump", seed, cfg.digest());
  auto specs = make_test_specs(n_specs, seed);
  AttentionMassReport rep = attention_mass(model, cb, specs, cfg, seed);

  nlohmann::json j;
  j["age_on_age_region"] = rep.age_on_age_region;
  j["id_on_age_region"] = rep.id_on_age_region;
  j["age_on_face_region"] = rep.age_on_face_region;
  j["id_on_face_region"] = rep.id_on_face_region;
  j["age_region_margin"] = rep.age_region_margin;
  j["age_region_t"] = rep.age_region_t;
  j["face_region_margin"] = rep.face_region_margin;
  j["face_region_t"] = rep.face_region_t;
  j["decoupled"] = rep.decoupled;
  const std::string path = join(out, "attention.json");
  {
    std::ofstream f(path);
    f << j.dump(2) << "\n";
  }
  m.add_output(path);
  finish_manifest(m, out);
  std::cout << "age-region margin " << rep.age_region_margin << " (t "
            << rep.age_region_t << "), face-region margin " << rep.face_region_margin
            << " (t " << rep.face_region_t << "), decoupled "
            << (rep.decoupled ? "yes" : "no") << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& paths) {
  std::vector<AblationRow> rows;
  for (const auto& p : paths) {
    AblationRow row;
    row.name = fs::path(p).parent_path().filename().string();
    if (row.name.empty()) row.name = fs::path(p).stem().string();
    row.report = read_report(p);
    rows.push_back(std::move(row));
  }
  std::cout << format_report_table(rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"miniature diffusion framework for face age editing"};
  app.require_subcommand(1);

  // gen-data
  int gen_n = 8500;
  uint64_t gen_seed = 42;
  std::string gen_dist = "uniform";
  std::string gen_out = "out/dataset";
  auto* gen = app.add_subcommand("gen-data", "render a synthetic face dataset");
  gen->add_option("--n", gen_n, "number of records");
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--dist", gen_dist, "age distribution: uniform or balanced");
  gen->add_option("--out", gen_out, "output directory");

  // build-codebook
  std::string cb_data, cb_out = "out/codebook";
  auto* cbk = app.add_subcommand("build-codebook", "average age embeddings per age");
  cbk->add_option("--data", cb_data, "dataset directory")->required();
  cbk->add_option("--out", cb_out, "output directory");

  // train-probe
  std::string tp_data, tp_out = "out/probe";
  auto* tp = app.add_subcommand("train-probe",
                                "fit the frozen age probe and identity encoder");
  tp->add_option("--data", tp_data, "dataset directory")->required();
  tp->add_option("--out", tp_out, "output directory");

  // train
  std::string tr_config, tr_data, tr_cb, tr_probe, tr_init, tr_out = "out/train";
  auto* tr = app.add_subcommand("train", "run one training stage");
  tr->add_option("--config", tr_config, "train config json")->required();
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--codebook", tr_cb, "codebook file")->required();
  tr->add_option("--probe", tr_probe, "age probe checkpoint (stage II)");
  tr->add_option("--init", tr_init, "initial model checkpoint");
  tr->add_option("--out", tr_out, "output directory");

  // edit
  std::string ed_ckpt, ed_cb, ed_spec, ed_config, ed_out = "out/edit";
  int ed_target = 40;
  double ed_id = 1.0, ed_age = 1.0, ed_cage = 1.0;
  uint64_t ed_seed = 0;
  auto* ed = app.add_subcommand("edit", "regenerate a face at a target age");
  ed->add_option("--checkpoint", ed_ckpt, "model checkpoint")->required();
  ed->add_option("--codebook", ed_cb, "codebook file")->required();
  ed->add_option("--spec", ed_spec, "source face spec json")->required();
  ed->add_option("--target-age", ed_target, "target age")->required();
  ed->add_option("--id-scale", ed_id, "identity branch scale");
  ed->add_option("--age-scale", ed_age, "age branch scale");
  ed->add_option("--cage-scale", ed_cage, "age phrase branch scale");
  ed->add_option("--seed", ed_seed, "sampling seed");
  ed->add_option("--config", ed_config, "sampler config json");
  ed->add_option("--out", ed_out, "output directory");

  // eval
  std::string ev_ckpt, ev_cb, ev_enc, ev_config, ev_out = "out/eval";
  int ev_n = 100;
  uint64_t ev_seed = 1234;
  auto* ev = app.add_subcommand("eval", "age MAE and identity similarity");
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--codebook", ev_cb, "codebook file")->required();
  ev->add_option("--encoder", ev_enc, "identity encoder checkpoint")->required();
  ev->add_option("--n-specs", ev_n, "held-out identities");
  ev->add_option("--seed", ev_seed, "spec + sampling seed");
  ev->add_option("--config", ev_config, "sampler config json");
  ev->add_option("--out", ev_out, "output directory");

  // ablate
  std::string ab_c1, ab_c2, ab_data, ab_cb, ab_probe, ab_enc, ab_out = "out/ablate";
  int ab_n = 100;
  uint64_t ab_seed = 1234;
  auto* ab = app.add_subcommand("ablate", "train and score the four variants");
  ab->add_option("--stage1-config", ab_c1, "stage I config json")->required();
  ab->add_option("--stage2-config", ab_c2, "stage II config json")->required();
  ab->add_option("--data", ab_data, "dataset directory")->required();
  ab->add_option("--codebook", ab_cb, "codebook file")->required();
  ab->add_option("--probe", ab_probe, "age probe checkpoint")->required();
  ab->add_option("--encoder", ab_enc, "identity encoder checkpoint")->required();
  ab->add_option("--n-specs", ab_n, "held-out identities");
  ab->add_option("--seed", ab_seed, "spec + sampling seed");
  ab->add_option("--out", ab_out, "output directory");

  // grad-check
  int gc_probes = 100;
  uint64_t gc_seed = 21;
  auto* gc = app.add_subcommand("grad-check",
                                "finite-difference check of the full loss path");
  gc->add_option("--probes", gc_probes, "probed coordinates");
  gc->add_option("--seed", gc_seed, "probe seed");

  // attn-dump
  std::string at_ckpt, at_cb, at_config, at_out = "out/attention";
  int at_n = 50;
  uint64_t at_seed = 66;
  auto* at = app.add_subcommand("attn-dump", "per-branch attention region masses");
  at->add_option("--checkpoint", at_ckpt, "model checkpoint")->required();
  at->add_option("--codebook", at_cb, "codebook file")->required();
  at->add_option("--n-specs", at_n, "test identities");
  at->add_option("--seed", at_seed, "spec + sampling seed");
  at->add_option("--config", at_config, "sampler config json");
  at->add_option("--out", at_out, "output directory");

  // report
  std::vector<std::string> rp_paths;
  auto* rp = app.add_subcommand("report", "print a table from report json files");
  rp->add_option("paths", rp_paths, "report.json files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_n, gen_seed, gen_dist, gen_out);
    if (cbk->parsed()) return cmd_build_codebook(cb_data, cb_out);
    if (tp->parsed()) return cmd_train_probe(tp_data, tp_out);
    if (tr->parsed())
      return cmd_train(tr_config, tr_data, tr_cb, tr_probe, tr_init, tr_out);
    if (ed->parsed())
      return cmd_edit(ed_ckpt, ed_cb, ed_spec, ed_target, ed_id, ed_age, ed_cage,
                      ed_seed, ed_config, ed_out);
    if (ev->parsed())
      return cmd_eval(ev_ckpt, ev_cb, ev_enc, ev_n, ev_seed, ev_config, ev_out);
    if (ab->parsed())
      return cmd_ablate(ab_c1, ab_c2, ab_data, ab_cb, ab_probe, ab_enc, ab_n, ab_seed,
                        ab_out);
    if (gc->parsed()) return cmd_grad_check(gc_probes, gc_seed);
    if (at->parsed())
      return cmd_attn_dump(at_ckpt, at_cb, at_n, at_seed, at_config, at_out);
    if (rp->parsed()) return cmd_report(rp_paths);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

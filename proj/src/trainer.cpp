#include "dualseg/trainer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_map>

#include "dualseg/augmentation.hpp"
#include "dualseg/checkpoint.hpp"
#include "dualseg/objectives.hpp"
#include "dualseg/rng.hpp"

namespace dualseg {

using nlohmann::json;
namespace fs = std::filesystem;

real lr_schedule(std::int64_t step, std::int64_t total, real base_lr, real power) {
  if (total <= 0) throw std::invalid_argument("lr_schedule: total must be positive");
  const real remain = 1.0 - static_cast<real>(step) / static_cast<real>(total);
  if (remain <= 0.0) return 0.0;
  return base_lr * std::pow(remain, power);
}

namespace {

void shuffle(std::vector<int>& v, Rng& rng) {
  for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) std::swap(v[i], v[rng.uniform_int(0, i)]);
}

// labeled samples cycle forever, reshuffled each pass; position is a pure
// function of the consumed count so resume lands on the identical sample
struct LabeledStream {
  std::vector<int> indices;
  std::uint64_t seed = 0;

  int at(std::int64_t consumed) const {
    const int n = static_cast<int>(indices.size());
    const std::int64_t pass = consumed / n;
    std::vector<int> perm = indices;
    Rng rng(derive_seed(seed, "labeled_pass", static_cast<std::uint64_t>(pass)));
    shuffle(perm, rng);
    return perm[consumed % n];
  }
};

std::vector<int> flatten_mask(const std::optional<Mask>& mask, int pixels) {
  if (!mask) return std::vector<int>(pixels, kIgnoreClass);
  return mask->data;
}

}  // namespace

DualStudentModel::DualStudentModel(const RunConfig& config, const Corpus& corpus) {
  BackboneSpec g_spec = config.backbone_global;
  BackboneSpec l_spec = config.backbone_local;
  bool g_explicit = config.toggles.use_esg;
  bool l_explicit = false;
  real l_init_std = config.toggles.use_isg
                        ? 0.02
                        : 1.0 / std::sqrt(static_cast<real>(l_spec.embed_dim));
  switch (config.toggles.homogeneous_students) {
    case Toggles::Homogeneous::both_global:
      l_spec = g_spec;
      g_explicit = true;
      l_explicit = true;
      break;
    case Toggles::Homogeneous::both_local:
      g_spec = l_spec;
      g_explicit = false;
      l_init_std = 0.02;
      break;
    case Toggles::Homogeneous::off:
      break;
  }

  const int K = corpus.class_count;
  const int S = config.train_size;
  const std::uint64_t g_seed = derive_seed(config.seed, "student_global");
  const std::uint64_t l_seed = derive_seed(config.seed, "student_local");

  std::optional<PrototypeMatrix> protos;
  if (g_explicit || l_explicit) {
    TextEncoder encoder = config.text_encoder_checkpoint.empty()
                              ? make_stub_text_encoder(config.text_dim)
                              : load_embedding_table_encoder(config.text_encoder_checkpoint);
    ConceptSet concepts =
        config.concepts_path.empty()
            ? ConceptSet::defaults_for(corpus.class_names, config.template_str)
            : ConceptSet::load(config.concepts_path, corpus.class_names, config.template_str);
    protos = encode_concepts(concepts, encoder);
  }

  if (g_explicit)
    global_ = Student::with_explicit_guidance(g_spec, S, S, *protos, g_seed);
  else
    global_ = Student::with_implicit_guidance(g_spec, S, S, K, g_seed, 0.02);

  if (l_explicit)
    local_ = Student::with_explicit_guidance(l_spec, S, S, *protos, l_seed);
  else
    local_ = Student::with_implicit_guidance(l_spec, S, S, K, l_seed, l_init_std);

  opt_ = AdamW(0.9, 0.999, 1e-8, config.weight_decay);
  opt_.register_params(global_->trainable_params("global"));
  opt_.register_params(local_->trainable_params("local"));
}

std::vector<NamedParam> DualStudentModel::all_params() const {
  std::vector<NamedParam> out = global_->all_params("global");
  auto l = local_->all_params("local");
  out.insert(out.end(), l.begin(), l.end());
  return out;
}

void DualStudentModel::save_checkpoint(const fs::path& dir, std::int64_t step,
                                       int epochs_completed) const {
  TensorStore store;
  for (const auto& p : all_params()) store.put(p.name, p.tensor);
  for (size_t i = 0; i < opt_.params().size(); ++i) {
    const auto& p = opt_.params()[i];
    const auto& slot = const_cast<AdamW&>(opt_).slots()[i];
    store.put("opt." + p.name + ".m", p.tensor.rows(), p.tensor.cols(), slot.m);
    store.put("opt." + p.name + ".v", p.tensor.rows(), p.tensor.cols(), slot.v);
  }
  store.save(dir);
  json meta{{"step", step}, {"epochs_completed", epochs_completed}, {"adam_t", opt_.step_count()}};
  std::ofstream(dir / "meta.json") << meta.dump(2) << "\n";
}

std::pair<std::int64_t, int> DualStudentModel::load_checkpoint(const fs::path& dir) {
  TensorStore store = TensorStore::load(dir);
  for (auto& p : all_params()) {
    const StoredTensor& src = store.get(p.name);
    if (src.rows != p.tensor.rows() || src.cols != p.tensor.cols())
      throw std::runtime_error("checkpoint: shape mismatch for '" + p.name + "': stored " +
                               std::to_string(src.rows) + "x" + std::to_string(src.cols) +
                               ", model " + std::to_string(p.tensor.rows()) + "x" +
                               std::to_string(p.tensor.cols()));
    p.tensor.value_mut() = src.data;
  }
  for (size_t i = 0; i < opt_.params().size(); ++i) {
    const auto& p = opt_.params()[i];
    opt_.slots()[i].m = store.get("opt." + p.name + ".m").data;
    opt_.slots()[i].v = store.get("opt." + p.name + ".v").data;
  }
  std::ifstream mf(dir / "meta.json");
  if (!mf) throw std::runtime_error("checkpoint: missing meta.json in " + dir.string());
  json meta = json::parse(mf);
  opt_.set_step_count(meta.at("adam_t").get<std::int64_t>());
  return {meta.at("step").get<std::int64_t>(), meta.at("epochs_completed").get<int>()};
}

namespace {

struct UnlabeledBatch {
  ImageBatch weak;
  std::vector<Image> strong1, strong2;
  std::vector<int> gt;  // transformed ground truth for monitoring, ignore-padded
  int count = 0;
  bool any_gt = false;
};

ImageBatch to_batch(const std::vector<Image>& images) {
  ImageBatch b(static_cast<int>(images.size()), images[0].channels, images[0].height,
               images[0].width);
  for (size_t i = 0; i < images.size(); ++i) b.set(static_cast<int>(i), images[i]);
  return b;
}

// per-student view of one step's losses
struct StudentStepTerms {
  Tensor sup;
  Tensor ct;
  Tensor weak_logits;
  Tensor weak_probs;
  std::vector<int> pseudo;
  std::vector<real> conf;
  PseudoAccuracy acc;
};

RunArtifacts train_impl(const RunConfig& config_in, const Corpus& corpus, const fs::path& run_dir,
                        const TrainOptions& opts, bool resuming) {
  RunConfig config = config_in;
  config.validate();
  corpus.validate();

  const int S = config.train_size;
  const int K = corpus.class_count;
  const int pixels = S * S;
  const int epochs = config.resolved_epochs(corpus);

  const Split split = split_protocol(corpus, config.split);
  std::vector<int> labeled_idx, unlabeled_idx;
  {
    std::unordered_map<std::string, int> by_id;
    for (int i = 0; i < static_cast<int>(corpus.samples.size()); ++i)
      by_id[corpus.samples[i].id] = i;
    for (const auto& id : split.labeled) labeled_idx.push_back(by_id.at(id));
    for (const auto& id : split.unlabeled) unlabeled_idx.push_back(by_id.at(id));
  }
  const int n_unlabeled = static_cast<int>(unlabeled_idx.size());
  const bool has_unlabeled = n_unlabeled > 0 && config.batch_unlabeled > 0;
  const int bu_eff = has_unlabeled ? std::min(config.batch_unlabeled, n_unlabeled) : 0;
  const int steps_per_epoch =
      has_unlabeled
          ? std::max(1, n_unlabeled / std::max(1, config.batch_unlabeled))
          : std::max(1, static_cast<int>(labeled_idx.size()) / config.batch_labeled);
  const std::int64_t total_steps = static_cast<std::int64_t>(epochs) * steps_per_epoch;

  LossWeights weights = config.weights;
  if (weights.rampup_steps == 0) weights.rampup_steps = total_steps;

  DualStudentModel model(config, corpus);
  Student* students[2] = {&model.global_student(), &model.local_student()};

  const std::string fingerprint = config_fingerprint(config);
  const std::uint64_t run_seed = config.seed;
  LabeledStream labeled_stream{labeled_idx, derive_seed(run_seed, "labeled_order")};

  std::int64_t start_step = 0;
  int start_epoch = 0;
  std::vector<StepRecord> records;

  fs::create_directories(run_dir / "checkpoints");
  if (resuming) {
    // newest epoch checkpoint wins
    fs::path best;
    int best_epoch = -1;
    for (const auto& entry : fs::directory_iterator(run_dir / "checkpoints")) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("epoch_", 0) == 0) {
        const int e = std::stoi(name.substr(6));
        if (e > best_epoch) {
          best_epoch = e;
          best = entry.path();
        }
      }
    }
    if (best_epoch < 0) throw std::runtime_error("resume: no epoch checkpoints in " +
                                                 (run_dir / "checkpoints").string());
    const auto [step, epochs_done] = model.load_checkpoint(best);
    start_step = step;
    start_epoch = epochs_done;
    // drop any records past the checkpoint, keep the rest
    if (fs::exists(run_dir / "steps.jsonl")) {
      for (const auto& r : read_step_records((run_dir / "steps.jsonl").string()))
        if (r.step < start_step) records.push_back(r);
    }
    std::ofstream rewrite(run_dir / "steps.jsonl", std::ios::trunc);
    for (const auto& r : records) rewrite << r.to_json_line() << "\n";
  } else {
    std::ofstream cf(run_dir / "config.json");
    cf << run_config_to_json(config) << "\n";
    std::ofstream(run_dir / "steps.jsonl", std::ios::trunc);
  }

  std::ofstream steps_out(run_dir / "steps.jsonl", std::ios::app);

  for (int epoch = start_epoch; epoch < epochs; ++epoch) {
    std::vector<int> epoch_unlabeled = unlabeled_idx;
    {
      Rng rng(derive_seed(run_seed, "unlabeled_order", epoch));
      shuffle(epoch_unlabeled, rng);
    }

    for (int b = 0; b < steps_per_epoch; ++b) {
      const std::int64_t step = static_cast<std::int64_t>(epoch) * steps_per_epoch + b;

      // ---- labeled batch, one augmentation draw shared by both students
      ImageBatch lb(config.batch_labeled, 3, S, S);
      std::vector<int> lab_labels(static_cast<size_t>(config.batch_labeled) * pixels);
      for (int i = 0; i < config.batch_labeled; ++i) {
        const std::int64_t consumed = step * config.batch_labeled + i;
        const Sample& smp = corpus.samples[labeled_stream.at(consumed)];
        WeakView wv = weak_view(smp, S, S, derive_seed(run_seed, "aug_labeled", step, i));
        lb.set(i, wv.image);
        std::copy(wv.mask->data.begin(), wv.mask->data.end(),
                  lab_labels.begin() + static_cast<size_t>(i) * pixels);
      }

      // ---- unlabeled views
      UnlabeledBatch ub;
      if (has_unlabeled) {
        std::vector<Image> weak_imgs;
        ub.count = bu_eff;
        ub.gt.resize(static_cast<size_t>(bu_eff) * pixels, kIgnoreClass);
        for (int i = 0; i < bu_eff; ++i) {
          const Sample& smp = corpus.samples[epoch_unlabeled[b * bu_eff + i]];
          ViewBundle bundle = make_view_bundle(smp, S, S, config.strong_aug,
                                               derive_seed(run_seed, "aug_unlabeled", step, i));
          weak_imgs.push_back(std::move(bundle.weak));
          ub.strong1.push_back(std::move(bundle.strong1));
          ub.strong2.push_back(std::move(bundle.strong2));
          if (bundle.mask) {
            ub.any_gt = true;
            std::copy(bundle.mask->data.begin(), bundle.mask->data.end(),
                      ub.gt.begin() + static_cast<size_t>(i) * pixels);
          }
        }
        ub.weak = to_batch(weak_imgs);
      }

      const bool want_unlabeled_grad = config.toggles.use_ct || config.toggles.use_sta;

      // CutMix boxes drawn once per strong view; both students see the same
      // mixed images, each mixes its own label maps with the same boxes
      std::vector<CutMixBox> boxes1, boxes2;
      ImageBatch sb1, sb2;
      if (has_unlabeled && config.toggles.use_ct) {
        boxes1 = draw_cutmix_boxes(ub.count, S, S, derive_seed(run_seed, "cutmix", step, 1));
        boxes2 = draw_cutmix_boxes(ub.count, S, S, derive_seed(run_seed, "cutmix", step, 2));
        std::vector<Image> m1 = ub.strong1, m2 = ub.strong2;
        apply_cutmix_images(m1, boxes1);
        apply_cutmix_images(m2, boxes2);
        sb1 = to_batch(m1);
        sb2 = to_batch(m2);
      }

      StudentStepTerms terms[2];
      for (int s = 0; s < 2; ++s) {
        Student& student = *students[s];

        // Eq. 1 on the labeled batch
        {
          FeatureMap fm = student.encode_images(lb, true);
          Tensor logits = student.decode_features(fm, S, S);
          terms[s].sup = supervised_loss(logits, lab_labels);
        }

        terms[s].ct = Tensor::zeros(1, 1);
        if (!has_unlabeled) continue;

        // weak view: pseudo-labels + confidence (and the stability inputs)
        FeatureMap fm_w;
        if (want_unlabeled_grad) {
          fm_w = student.encode_images(ub.weak, true);
          if (config.toggles.use_sta) {
            terms[s].weak_logits = student.decode_features(fm_w, S, S);
            terms[s].weak_probs = softmax_rows(terms[s].weak_logits);
          } else {
            NoGradGuard ng;
            terms[s].weak_logits = student.decode_features(fm_w, S, S);
            terms[s].weak_probs = softmax_rows(terms[s].weak_logits);
          }
        } else {
          NoGradGuard ng;
          fm_w = student.encode_images(ub.weak, false);
          terms[s].weak_logits = student.decode_features(fm_w, S, S);
          terms[s].weak_probs = softmax_rows(terms[s].weak_logits);
        }
        derive_pseudo(terms[s].weak_probs, terms[s].pseudo, terms[s].conf);
        terms[s].acc = ub.any_gt
                           ? pseudo_accuracy(terms[s].pseudo, ub.gt, terms[s].conf, weights.tau)
                           : PseudoAccuracy{};

        // Eq. 3: feature-perturbed + two strong branches
        if (config.toggles.use_ct) {
          FeatureMap fm_fp = feature_perturb(fm_w, config.feature_perturb_rate,
                                             derive_seed(run_seed, "fp", step, s), true);
          Tensor probs_fp = softmax_rows(student.decode_features(fm_fp, S, S));

          auto split_per_image = [&](const std::vector<int>& flat_p,
                                     const std::vector<real>& flat_c,
                                     std::vector<std::vector<int>>& p,
                                     std::vector<std::vector<real>>& c) {
            p.resize(ub.count);
            c.resize(ub.count);
            for (int i = 0; i < ub.count; ++i) {
              p[i].assign(flat_p.begin() + static_cast<size_t>(i) * pixels,
                          flat_p.begin() + static_cast<size_t>(i + 1) * pixels);
              c[i].assign(flat_c.begin() + static_cast<size_t>(i) * pixels,
                          flat_c.begin() + static_cast<size_t>(i + 1) * pixels);
            }
          };
          auto flatten = [&](const std::vector<std::vector<int>>& p,
                             const std::vector<std::vector<real>>& c, std::vector<int>& fp_,
                             std::vector<real>& fc_) {
            fp_.clear();
            fc_.clear();
            for (int i = 0; i < ub.count; ++i) {
              fp_.insert(fp_.end(), p[i].begin(), p[i].end());
              fc_.insert(fc_.end(), c[i].begin(), c[i].end());
            }
          };

          std::vector<std::vector<int>> p1, p2;
          std::vector<std::vector<real>> c1, c2;
          split_per_image(terms[s].pseudo, terms[s].conf, p1, c1);
          p2 = p1;
          c2 = c1;
          apply_cutmix_labels(p1, c1, S, S, boxes1);
          apply_cutmix_labels(p2, c2, S, S, boxes2);
          std::vector<int> pseudo_s1, pseudo_s2;
          std::vector<real> conf_s1, conf_s2;
          flatten(p1, c1, pseudo_s1, conf_s1);
          flatten(p2, c2, pseudo_s2, conf_s2);

          Tensor probs_s1 =
              softmax_rows(student.decode_features(student.encode_images(sb1, true), S, S));
          Tensor probs_s2 =
              softmax_rows(student.decode_features(student.encode_images(sb2, true), S, S));

          terms[s].ct = consistency_loss(probs_fp, probs_s1, probs_s2,
                                         BranchTargets{&terms[s].pseudo, &terms[s].conf},
                                         BranchTargets{&pseudo_s1, &conf_s1},
                                         BranchTargets{&pseudo_s2, &conf_s2}, weights.tau);
        }
      }

      // Eq. 9-11 on the weak-view probability pair
      Tensor sta_core = Tensor::zeros(1, 1);
      if (has_unlabeled && config.toggles.use_sta) {
        std::vector<real> cg, cl;
        confidence_pair(terms[0].weak_logits, terms[1].weak_logits, cg, cl);
        const ArbitrationMask mask = arbitrate(cg, cl, weights.tau);
        sta_core = stability_loss(terms[0].weak_probs, terms[1].weak_probs, mask, 1.0);
      }

      Tensor loss =
          total_loss(terms[0].sup, terms[1].sup, terms[0].ct, terms[1].ct, sta_core, weights, step);
      backward(loss);
      const real lr = lr_schedule(step, total_steps, config.base_lr, config.poly_power);
      model.optimizer().step(lr);

      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.lr = lr;
      rec.sup_g = terms[0].sup.item();
      rec.sup_l = terms[1].sup.item();
      rec.ct_g = terms[0].ct.item();
      rec.ct_l = terms[1].ct.item();
      rec.sta = sta_core.item();
      rec.lambda_sta = rampup(step, weights.rampup_steps, weights.lambda_sta_max);
      rec.pseudo_acc_g = terms[0].acc.defined ? terms[0].acc.value : -1.0;
      rec.pseudo_acc_l = terms[1].acc.defined ? terms[1].acc.value : -1.0;
      records.push_back(rec);
      steps_out << rec.to_json_line() << "\n";
      steps_out.flush();
    }

    const int epochs_done = epoch + 1;
    const bool periodic = config.checkpoint_every_epochs > 0 &&
                          epochs_done % config.checkpoint_every_epochs == 0;
    const bool stopping = opts.stop_after_epoch > 0 && epochs_done >= opts.stop_after_epoch;
    if (periodic || stopping) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04d", epochs_done);
      model.save_checkpoint(run_dir / "checkpoints" / name,
                            static_cast<std::int64_t>(epochs_done) * steps_per_epoch, epochs_done);
    }
    if (!opts.quiet)
      std::fprintf(stderr, "epoch %d/%d done\n", epochs_done, epochs);
    if (stopping) {
      RunArtifacts partial;
      partial.run_dir = run_dir;
      partial.records = std::move(records);
      return partial;
    }
  }

  model.save_checkpoint(run_dir / "checkpoints" / "final", total_steps, epochs);

  RunArtifacts artifacts;
  artifacts.run_dir = run_dir;
  artifacts.records = std::move(records);
  if (opts.eval_corpus) {
    artifacts.final_eval = evaluate_model(model.global_student(), model.local_student(),
                                          *opts.eval_corpus, fingerprint);
    artifacts.eval_on = "external";
  } else {
    Corpus labeled_only;
    labeled_only.class_count = corpus.class_count;
    labeled_only.class_names = corpus.class_names;
    labeled_only.palette = corpus.palette;
    for (int idx : labeled_idx) labeled_only.samples.push_back(corpus.samples[idx]);
    artifacts.final_eval = evaluate_model(model.global_student(), model.local_student(),
                                          labeled_only, fingerprint);
    artifacts.eval_on = "train_labeled";
  }

  json metrics;
  metrics["eval_on"] = artifacts.eval_on;
  metrics["miou_global"] = artifacts.final_eval.global_student.miou;
  metrics["miou_local"] = artifacts.final_eval.local_student.miou;
  metrics["miou_fused"] = artifacts.final_eval.fused.miou;
  json per_class = json::array();
  for (size_t k = 0; k < artifacts.final_eval.fused.per_class_iou.size(); ++k) {
    if (artifacts.final_eval.fused.class_present[k])
      per_class.push_back(artifacts.final_eval.fused.per_class_iou[k]);
    else
      per_class.push_back(nullptr);
  }
  metrics["per_class_iou_fused"] = per_class;
  metrics["pixels"] = artifacts.final_eval.fused.pixels;
  metrics["config_fingerprint"] = fingerprint;
  std::ofstream(run_dir / "final_metrics.json") << metrics.dump(2) << "\n";

  return artifacts;
}

}  // namespace

RunArtifacts train(const RunConfig& config, const Corpus& corpus, const fs::path& run_dir,
                   const TrainOptions& opts) {
  fs::create_directories(run_dir);
  return train_impl(config, corpus, run_dir, opts, /*resuming=*/false);
}

RunArtifacts resume(const fs::path& run_dir, const Corpus& corpus, const TrainOptions& opts) {
  const RunConfig config = load_run_config(run_dir / "config.json");
  return train_impl(config, corpus, run_dir, opts, /*resuming=*/true);
}

}  // namespace dualseg

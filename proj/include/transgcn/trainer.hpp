#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "transgcn/autodiff.hpp"
#include "transgcn/checkpoint.hpp"
#include "transgcn/config.hpp"
#include "transgcn/encoder.hpp"
#include "transgcn/evaluator.hpp"
#include "transgcn/kg.hpp"
#include "transgcn/log.hpp"
#include "transgcn/objective.hpp"
#include "transgcn/optim.hpp"

namespace transgcn {

/// Entities uniform in +-6/sqrt(d); translation relations likewise and then
/// L1-normalized; rotation phases uniform in [0, 2pi); W0 and W1 are the
/// identity plus uniform noise of scale 0.01.
inline ModelState init_parameters(const TrainConfig& config, std::size_t num_entities, std::size_t num_relations,
                                  Rng& rng) {
  config.validate();
  ModelState s;
  s.assumption = config.assumption;
  s.activation = config.activation;
  s.dim = config.dim;
  const double bound = 6.0 / std::sqrt(static_cast<double>(config.dim));
  std::uniform_real_distribution<double> embed(-bound, bound);
  s.entity_embed = Matrix(num_entities, config.dim);
  for (double& x : s.entity_embed.data()) x = embed(rng);
  s.relation_params = Matrix(num_relations, s.relation_width());
  if (config.assumption == Assumption::rotation) {
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    for (double& x : s.relation_params.data()) x = phase(rng);
  } else {
    for (double& x : s.relation_params.data()) x = embed(rng);
    for (std::size_t i = 0; i < num_relations; ++i) {
      auto row = s.relation_params.row(i);
      double l1 = 0.0;
      for (double x : row) l1 += std::abs(x);
      if (l1 > 0.0)
        for (double& x : row) x /= l1;
    }
  }
  std::uniform_real_distribution<double> noise(-0.01, 0.01);
  for (std::size_t l = 0; l < config.layers; ++l) {
    LayerParams p{Matrix::identity(config.dim), Matrix::identity(config.dim)};
    for (double& x : p.w0.data()) x += noise(rng);
    for (double& x : p.w1.data()) x += noise(rng);
    s.layers.push_back(std::move(p));
  }
  return s;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  bool evaluated = false;
  double valid_mrr = 0.0;
};

struct TrainOptions {
  std::ostream* log = nullptr;  // tab-separated `epoch, mean_loss[, valid_mrr]`
  std::size_t threads = 1;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochRecord> history;
  std::vector<std::pair<std::size_t, double>> evaluations;  // (epoch, valid MRR), epoch 0 first
};

/// Raised when a step produces a non-finite value; carries the best
/// checkpoint seen before the failure.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& diagnostic, Checkpoint last_good)
      : NumericError(diagnostic), last_good_(std::move(last_good)) {}
  const Checkpoint& last_good() const { return last_good_; }

 private:
  Checkpoint last_good_;
};

/// Loss on one batch of positives with their negatives (n per positive, contiguous).
inline ad::Var batch_loss(const ModelVars& vars, const NeighborhoodIndex& index,
                          const TrainConfig& config, std::span<const Triple> positives,
                          std::span<const Triple> negatives, std::size_t use_layers) {
  const std::size_t batch = positives.size();
  const std::size_t n = negatives.size() / batch;
  Encoded enc = encode(vars, index, config.assumption, use_layers);
  ad::Var pos = score_triples(enc, positives, config.assumption, config.norm);
  ad::Var neg = ad::reshape(score_triples(enc, negatives, config.assumption, config.norm), batch, n);
  if (config.resolved_sampling() == Sampling::vanilla) return margin_loss(pos, neg, config.resolved_gamma());
  return self_adv_loss(pos, neg, self_adv_weights(neg, config.alpha), config.resolved_gamma());
}

inline double validation_mrr(const KnowledgeGraph& kg, const ModelState& state, const NeighborhoodIndex& index,
                             const KnownTriples& known, Norm norm, std::size_t threads) {
  return evaluate(kg, Split::valid, encode_frozen(state, index), known, norm, threads).mrr;
}

/// Adam training with validation-MRR model selection. The model at epoch 0
/// is the first candidate; the validation split is scored every `eval-every`
/// epochs and after the last epoch. During the first `pretrain-epochs`
/// epochs only the base model (no encoder layers) is optimized.
inline TrainResult train(const KnowledgeGraph& kg, const TrainConfig& raw_config, const TrainOptions& options = {}) {
  const TrainConfig config = raw_config.resolved();
  config.validate();
  if (kg.train().empty()) throw ConfigError("training split is empty");

  Rng init_rng(mix_seed(config.seed, 0x1417));
  ModelState state = init_parameters(config, kg.num_entities(), kg.num_relations(), init_rng);
  AdamState adam = AdamState::zeros_like(std::as_const(state).parameters());
  const NeighborhoodIndex index = build_index(kg);
  const KnownTriples known(kg);
  const AdamHyper hyper{config.lr};
  const bool has_valid = !kg.valid().empty();

  auto snapshot = [&](std::size_t epoch, double mrr) {
    return Checkpoint{config, state, adam, kg.entities(), kg.relations(), epoch, mrr};
  };

  TrainResult result;
  double best_mrr = has_valid ? validation_mrr(kg, state, index, known, config.norm, options.threads) : 0.0;
  result.best = snapshot(0, best_mrr);
  if (has_valid) result.evaluations.emplace_back(0, best_mrr);

  std::vector<std::size_t> order(kg.train().size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const std::size_t use_layers = epoch <= config.pretrain_epochs ? 0 : config.layers;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(mix_seed(config.seed, 0x5eed, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      std::vector<Triple> positives;
      std::vector<Triple> negatives;
      for (std::size_t p = start; p < end; ++p) {
        const Triple& t = kg.train()[order[p]];
        positives.push_back(t);
        // One stream per (epoch, position) keeps sampling independent of threading.
        Rng rng(mix_seed(config.seed, epoch, p));
        auto negs = sample_negatives(t, config.negatives, kg.num_entities(), rng,
                                     config.filter_negatives ? &known : nullptr);
        negatives.insert(negatives.end(), negs.begin(), negs.end());
      }
      try {
        ad::Tape tape;
        ModelVars vars = bind(tape, state, true);
        ad::Var loss = batch_loss(vars, index, config, positives, negatives, use_layers);
        tape.backward(loss);
        std::vector<Matrix> grads;
        for (ad::Var v : vars.all()) grads.push_back(v.grad());
        clip_global_norm(grads, config.clip_norm);
        ++adam.step;
        auto params = state.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
          adam_step(*params[i], grads[i], adam.m[i], adam.v[i], hyper, adam.step);
        }
        for (const Matrix* p : state.parameters()) {
          for (double x : p->data()) {
            if (!std::isfinite(x)) throw NumericError("non-finite parameter after Adam update");
          }
        }
        loss_sum += loss.value()(0, 0) * static_cast<double>(positives.size());
      } catch (const NumericError& e) {
        std::ostringstream diag;
        diag << "training aborted at epoch " << epoch << ", batch starting at " << start << ": " << e.what();
        log::error(diag.str());
        throw TrainingAborted(diag.str(), result.best);
      }
    }

    EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size())};
    if (has_valid && (epoch % config.eval_every == 0 || epoch == config.epochs)) {
      rec.evaluated = true;
      rec.valid_mrr = validation_mrr(kg, state, index, known, config.norm, options.threads);
      result.evaluations.emplace_back(epoch, rec.valid_mrr);
      if (rec.valid_mrr > best_mrr) {
        best_mrr = rec.valid_mrr;
        result.best = snapshot(epoch, best_mrr);
      }
    }
    if (!has_valid && epoch == config.epochs) result.best = snapshot(epoch, 0.0);
    if (options.log) {
      *options.log << rec.epoch << '\t' << TrainConfig::format_double(rec.mean_loss);
      if (rec.evaluated) *options.log << '\t' << TrainConfig::format_double(rec.valid_mrr);
      *options.log << '\n';
    }
    if (options.on_epoch) options.on_epoch(rec);
    log::debug("epoch ", epoch, " loss ", rec.mean_loss, rec.evaluated ? " valid_mrr " : "",
               rec.evaluated ? std::to_string(rec.valid_mrr) : "");
    result.history.push_back(rec);
  }
  return result;
}

// ---- parameter accounting ----

/// This model's parameter count and the saving relative to an R-GCN encoder
/// with B bases (or B diagonal blocks), for both assumptions.
struct ParamReport {
  std::size_t num_bases = 0;
  std::size_t layers = 0;
  std::size_t dim = 0;
  std::size_t num_relations = 0;
  std::size_t num_entities = 0;
  std::size_t relation_width = 0;
  std::int64_t own_count = 0;
  std::int64_t translation_basis_saving = 0;
  double translation_block_saving = 0.0;
  std::int64_t rotation_basis_saving = 0;
  double rotation_block_saving = 0.0;
};

inline ParamReport param_count_report(const TrainConfig& config, std::size_t num_entities, std::size_t num_relations,
                                      std::size_t num_bases) {
  if (num_bases < 1) throw ConfigError("number of bases must be >= 1");
  ParamReport r;
  r.num_bases = num_bases;
  r.layers = config.layers;
  r.dim = config.dim;
  r.num_relations = num_relations;
  r.num_entities = num_entities;
  r.relation_width = config.assumption == Assumption::rotation ? config.dim / 2 : config.dim;
  const auto B = static_cast<std::int64_t>(num_bases), L = static_cast<std::int64_t>(config.layers),
             d = static_cast<std::int64_t>(config.dim), R = static_cast<std::int64_t>(num_relations),
             E = static_cast<std::int64_t>(num_entities);
  r.own_count = E * d + R * static_cast<std::int64_t>(r.relation_width) + L * 2 * d * d;
  r.translation_basis_saving = (B - 1) * L * d * d + 2 * B * R * L;
  r.rotation_basis_saving = (B - 5) * L * d * d + 2 * B * R * L - E * d;
  const double block = static_cast<double>(d) / static_cast<double>(B);
  const double shared = 2.0 * static_cast<double>(B * R * L) * block * block;
  r.translation_block_saving = shared - static_cast<double>(L * d * d);
  r.rotation_block_saving = shared - 5.0 * static_cast<double>(L * d * d) - static_cast<double>(E * d);
  return r;
}

// ---- layer sweep ----

struct SweepRow {
  std::size_t layers = 0;
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
};

/// Trains one model per layer count with otherwise identical settings and
/// reports filtered metrics on `split`.
inline std::vector<SweepRow> layer_sweep(const KnowledgeGraph& kg, const TrainConfig& base,
                                         const std::vector<std::size_t>& layer_counts, Split split = Split::test,
                                         const TrainOptions& options = {}) {
  if (layer_counts.empty()) throw ConfigError("layer sweep needs at least one layer count");
  const NeighborhoodIndex index = build_index(kg);
  const KnownTriples known(kg);
  std::vector<SweepRow> rows;
  for (std::size_t L : layer_counts) {
    TrainConfig c = base;
    c.layers = L;
    TrainOptions quiet = options;
    quiet.log = nullptr;
    const TrainResult res = train(kg, c, quiet);
    const RankingReport rep =
        evaluate(kg, split, encode_frozen(res.best.state, index), known, c.norm, options.threads);
    rows.push_back({L, rep.mrr, rep.hits1, rep.hits3, rep.hits10});
  }
  return rows;
}

}  // namespace transgcn

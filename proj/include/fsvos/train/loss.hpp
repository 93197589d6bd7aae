#pragma once

// Episodic loss recipe: cross-entropy + soft-IoU on decoded masks and
// proposals, cross-entropy on the auxiliary object/motion heads, and
// cross-entropy on the remapped matching score against way presence.

#include "fsvos/model/fusion.hpp"

namespace fsvos::train {

using model::EpisodeOutputs;
using nn::Tensor;

struct LossWeights {
  double mask_ce = 1.0;
  double mask_iou = 1.0;
  double proposal_ce = 1.0;
  double proposal_iou = 1.0;
  double aux_object_ce = 1.0;
  double aux_motion_ce = 1.0;
  double match_ce = 1.0;
};

template <typename S>
struct LossReport {
  double mask_ce = 0, mask_iou = 0, proposal_ce = 0, proposal_iou = 0;
  double aux_object_ce = 0, aux_motion_ce = 0, match_ce = 0;
  double total = 0;
  Tensor<S> total_tensor;

  bool finite() const {
    for (double v : {mask_ce, mask_iou, proposal_ce, proposal_iou, aux_object_ce, aux_motion_ce,
                     match_ce, total})
      if (!std::isfinite(v)) return false;
    return true;
  }

  nlohmann::json to_json() const {
    return {{"mask_ce", mask_ce},         {"mask_iou", mask_iou},
            {"proposal_ce", proposal_ce}, {"proposal_iou", proposal_iou},
            {"aux_object_ce", aux_object_ce}, {"aux_motion_ce", aux_motion_ce},
            {"match_ce", match_ce},       {"total", total}};
  }
};

// Union of all annotated query objects, the class-agnostic proposal target.
// Binary at 1/8 resolution: a cell is foreground when at least half covered
// (ties to foreground).
template <typename S>
inline Tensor<S> proposal_target(const Episode& ep, int factor) {
  std::vector<Mask> unions(ep.query.frame_count());
  for (int t = 0; t < ep.query.frame_count(); ++t) {
    Mask m;
    m.h = ep.query.height();
    m.w = ep.query.width();
    m.v.assign(size_t(m.h) * m.w, 0);
    for (const auto& qo : ep.query_objects)
      for (size_t i = 0; i < m.v.size(); ++i) m.v[i] |= qo.mask.masks[t].v[i];
    unions[t] = std::move(m);
  }
  Tensor<S> coverage = model::masks_to_tensor_downsampled<S>(unions, factor);
  for (S& v : coverage.vec()) v = v >= S(0.5) ? S(1) : S(0);
  return coverage;
}

template <typename S>
LossReport<S> compute_losses(const Episode& ep, const EpisodeOutputs<S>& out,
                             const model::ModelConfig& cfg, const LossWeights& w = {}) {
  LossReport<S> rep;
  const int ways = ep.ways();

  // Decoded masks vs per-way ground truth at input resolution.
  Tensor<S> mask_ce, mask_iou;
  int iou_terms = 0;
  for (int way = 0; way < ways; ++way) {
    MaskSequence gt = ep.way_ground_truth(way);
    Tensor<S> target = model::masks_to_tensor<S>(gt.masks);
    Tensor<S> ce = nn::bce_with_logits(out.way_mask_logits[way], target);
    mask_ce = mask_ce.defined() ? nn::add(mask_ce, ce) : ce;
    if (!gt.all_empty()) {
      Tensor<S> iou = nn::soft_iou_loss(nn::sigmoid(out.way_mask_logits[way]), target);
      mask_iou = mask_iou.defined() ? nn::add(mask_iou, iou) : iou;
      ++iou_terms;
    }
  }
  mask_ce = nn::muls(mask_ce, S(1.0 / ways));
  if (mask_iou.defined()) mask_iou = nn::muls(mask_iou, S(1.0 / iou_terms));

  // Proposals vs the union of all moving objects (coverage-fraction target).
  Tensor<S> prop_target = proposal_target<S>(ep, 8);
  Tensor<S> proposal_ce = nn::bce_with_logits(out.proposals.logits, prop_target);
  Tensor<S> proposal_iou;
  {
    S tsum = S(0);
    for (S v : prop_target.vec()) tsum += v;
    if (tsum > S(0))
      proposal_iou = nn::soft_iou_loss(nn::sigmoid(out.proposals.logits), prop_target);
  }

  // Auxiliary classification: every support shot; the query branch when the
  // episode carries a target (its way supplies the labels).
  Tensor<S> aux_obj, aux_mot;
  int obj_terms = 0, mot_terms = 0;
  auto add_aux = [&](const model::PrototypeSet<S>& proto, int object_class, int motion_class) {
    if (cfg.aux_object && cfg.use_appearance && proto.object_logits.defined()) {
      Tensor<S> ce = nn::cross_entropy_logits(proto.object_logits, object_class);
      aux_obj = aux_obj.defined() ? nn::add(aux_obj, ce) : ce;
      ++obj_terms;
    }
    if (cfg.aux_motion && cfg.use_motion && proto.motion_logits.defined()) {
      Tensor<S> ce = nn::cross_entropy_logits(proto.motion_logits, motion_class);
      aux_mot = aux_mot.defined() ? nn::add(aux_mot, ce) : ce;
      ++mot_terms;
    }
  };
  for (int way = 0; way < ways; ++way)
    for (size_t k = 0; k < ep.support[way].size(); ++k)
      add_aux(out.support[way][k], ep.support[way][k].category.object_class,
              ep.support[way][k].category.motion_class);
  if (ep.target_way != kNoTargetWay) {
    int cls = ep.way_motion_class(ep.target_way);
    for (const auto& qo : ep.query_objects)
      if (qo.category.motion_class == cls) {
        add_aux(out.query, qo.category.object_class, cls);
        break;
      }
  }
  if (aux_obj.defined()) aux_obj = nn::muls(aux_obj, S(1.0 / obj_terms));
  if (aux_mot.defined()) aux_mot = nn::muls(aux_mot, S(1.0 / mot_terms));

  // Matching: (S+1)/2 against way presence in the query ground truth.
  Tensor<S> match_loss;
  for (int way = 0; way < ways; ++way) {
    bool present = !ep.way_ground_truth(way).all_empty();
    Tensor<S> p = nn::adds(nn::muls(out.way_scores[way], S(0.5)), S(0.5));
    Tensor<S> ce = nn::bce_prob(p, present ? S(1) : S(0));
    match_loss = match_loss.defined() ? nn::add(match_loss, ce) : ce;
  }
  match_loss = nn::muls(match_loss, S(1.0 / ways));

  // Weighted sum; undefined (ablated / inapplicable) terms contribute zero.
  Tensor<S> total = nn::muls(mask_ce, S(w.mask_ce));
  auto add_term = [&](const Tensor<S>& t, double weight) {
    if (t.defined() && weight != 0.0) total = nn::add(total, nn::muls(t, S(weight)));
  };
  add_term(mask_iou, w.mask_iou);
  add_term(proposal_ce, w.proposal_ce);
  add_term(proposal_iou, w.proposal_iou);
  add_term(aux_obj, w.aux_object_ce);
  add_term(aux_mot, w.aux_motion_ce);
  add_term(match_loss, w.match_ce);

  rep.mask_ce = double(mask_ce.item());
  rep.mask_iou = mask_iou.defined() ? double(mask_iou.item()) : 0.0;
  rep.proposal_ce = double(proposal_ce.item());
  rep.proposal_iou = proposal_iou.defined() ? double(proposal_iou.item()) : 0.0;
  rep.aux_object_ce = aux_obj.defined() ? double(aux_obj.item()) : 0.0;
  rep.aux_motion_ce = aux_mot.defined() ? double(aux_mot.item()) : 0.0;
  rep.match_ce = double(match_loss.item());
  rep.total = double(total.item());
  rep.total_tensor = total;
  return rep;
}

}  // namespace fsvos::train

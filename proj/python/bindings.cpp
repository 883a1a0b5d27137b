#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>

#include "fhvae/cli.hpp"
#include "fhvae/config.hpp"
#include "fhvae/corpus.hpp"
#include "fhvae/evalharness.hpp"
#include "fhvae/losses.hpp"
#include "fhvae/model.hpp"

namespace py = pybind11;
using namespace fhvae;

namespace {

PriorConfig priors_of(double var_z1, double var_z2, double var_mu2) {
  PriorConfig p;
  p.var_z1 = var_z1;
  p.var_z2 = var_z2;
  p.var_mu2 = var_mu2;
  p.validate();
  return p;
}

GaussianPosterior posterior(const Vec& mean, const Vec& logvar) {
  if (mean.size() != logvar.size()) throw ContractError("mean and logvar sizes differ");
  return {mean, logvar};
}

std::vector<SpeakerMeta> speakers_of(const std::vector<std::tuple<std::string, std::string, std::optional<double>>>& rows) {
  std::vector<SpeakerMeta> out;
  for (const auto& [id, domain, intel] : rows) {
    SpeakerMeta m;
    m.speaker_id = id;
    if (domain == "control") m.domain = Domain::kControl;
    else if (domain == "dysarthric") m.domain = Domain::kDysarthric;
    else throw ConfigError("domain must be 'control' or 'dysarthric', got '" + domain + "'");
    m.intelligibility = intel;
    out.push_back(m);
  }
  return out;
}

py::dict split_dict(const SpeakerSplit& s) {
  py::dict d;
  d["train"] = s.train;
  d["test"] = s.test;
  return d;
}

py::dict synth(const std::map<std::string, py::object>& settings) {
  KeyValues kv;
  for (const auto& [k, v] : settings) {
    std::string text = py::str(v);
    if (py::isinstance<py::bool_>(v)) text = v.cast<bool>() ? "true" : "false";
    kv["synth." + k] = text;
  }
  RunSettings rs;
  rs.apply(kv);
  const SynthCorpus c = synth_generate(rs.synth);
  py::list features, speakers, labels, utterances;
  for (const auto& e : c.manifest.entries) {
    features.append(*e.features);
    speakers.append(e.speaker_id);
    labels.append(e.labels.value_or(std::vector<int>{}));
    utterances.append(e.utterance_id);
  }
  py::dict meta;
  for (const auto& [id, s] : c.manifest.speakers) {
    py::dict m;
    m["domain"] = s.domain == Domain::kDysarthric ? "dysarthric" : "control";
    m["intelligibility"] = s.intelligibility ? py::cast(*s.intelligibility) : py::none();
    meta[py::str(id)] = m;
  }
  py::dict out;
  out["digest"] = corpus_digest(c.manifest);
  out["features"] = features;
  out["utterances"] = utterances;
  out["speaker_of"] = speakers;
  out["labels"] = labels;
  out["speakers"] = meta;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Core operations of the two-scale factorized VAE toolkit";

  auto& base = py::register_exception<Error>(m, "FhvaeError");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  m.def(
      "kl_diag_gauss",
      [](const Vec& q_mean, const Vec& q_logvar, const Vec& p_mean, const Vec& p_var) {
        return kl_diag_gauss(posterior(q_mean, q_logvar), p_mean, p_var);
      },
      py::arg("q_mean"), py::arg("q_logvar"), py::arg("p_mean"), py::arg("p_var"),
      "KL(q || p) for diagonal Gaussians; p is given by its variance.");
  m.def("disc_loss", py::overload_cast<double, int>(&disc_loss), py::arg("p"), py::arg("label"),
        "Discriminator BCE for P(dysarthric)=p and label 1=dysarthric.");
  m.def(
      "gen_loss",
      [](double p, int label, bool dys_only) { return gen_loss(p, label, dys_only ? GenMode::kDysOnly : GenMode::kBoth); },
      py::arg("p"), py::arg("label"), py::arg("dys_only") = false, "Generator loss with flipped targets.");
  m.def(
      "reference_loss",
      [](const Vec& now_mean, const Vec& now_logvar, const Vec& ref_mean, const Vec& ref_logvar, int label,
         bool reverse_kl) {
        return reference_loss(posterior(now_mean, now_logvar), posterior(ref_mean, ref_logvar), label, reverse_kl);
      },
      py::arg("now_mean"), py::arg("now_logvar"), py::arg("ref_mean"), py::arg("ref_logvar"), py::arg("label"),
      py::arg("reverse_kl") = false, "KL between the frozen and current z1 posteriors on control rows.");
  m.def("disentangle_loss", py::overload_cast<const Mat&, const Mat&>(&disentangle_loss), py::arg("mu_z1"),
        py::arg("mu_z2"), "Sum of squared Pearson correlations between columns.");
  m.def(
      "z2_disc_loss",
      [](const Vec& z2, int own, const Mat& table, double var_z1, double var_z2, double var_mu2) {
        return z2_disc_loss(z2, own, table, priors_of(var_z1, var_z2, var_mu2));
      },
      py::arg("z2"), py::arg("own_index"), py::arg("mu2_table"), py::arg("var_z1") = 1.0, py::arg("var_z2") = 0.25,
      py::arg("var_mu2") = 1.0, "Sequence-discriminative loss of one z2 sample.");
  m.def(
      "infer_seq_mean",
      [](const Mat& enc_means, double var_z2, double var_mu2) {
        return infer_seq_mean(enc_means, priors_of(1.0, var_z2, var_mu2));
      },
      py::arg("enc_means"), py::arg("var_z2") = 0.25, py::arg("var_mu2") = 1.0,
      "Posterior mean of the sequence latent from per-segment z2 means (one row each).");
  m.def("micro_f1", &micro_f1, py::arg("predicted"), py::arg("truth"), "Micro-averaged multi-label F1.");
  m.def(
      "split_out_of_domain",
      [](const std::vector<std::tuple<std::string, std::string, std::optional<double>>>& rows, double threshold) {
        const auto s = speakers_of(rows);
        return split_dict(split_out_of_domain(s, threshold));
      },
      py::arg("speakers"), py::arg("threshold") = 70.0,
      "Speakers as (id, 'control'|'dysarthric', intelligibility) tuples.");
  m.def(
      "split_in_domain",
      [](const std::vector<std::tuple<std::string, std::string, std::optional<double>>>& rows) {
        const auto s = speakers_of(rows);
        return split_dict(split_in_domain(s));
      },
      py::arg("speakers"));
  m.def("synth_generate", &synth, py::arg("settings") = std::map<std::string, py::object>{},
        "Generates a synthetic corpus; keys are synth.* setting names without the prefix.");
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command line tool; returns (exit_code, stdout, stderr).");
}

// fw: train, score, evaluate and ship DeepFFM models.
//
// Exit codes: 0 ok, 1 usage, 2 data or format, 3 numeric.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>

#include "fw/fw.hpp"

namespace {

constexpr const char* kVersion = "fw 1.0 (model FWM1, quantized FWQ1, patch FWP1)";

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

int exit_code(fw::ErrorKind k) {
  switch (k) {
    case fw::ErrorKind::kUsage:
    case fw::ErrorKind::kContract: return kUsage;
    case fw::ErrorKind::kNumeric: return kNumeric;
    default: return kData;
  }
}

struct TrainArgs {
  std::string data, schema, out, in, predictions;
  int threads = 1;
  int prefetch = 1;
  std::size_t window = 30000;
  bool no_sparse = false;
  std::uint32_t k = 4;
  std::vector<std::uint32_t> hidden;
  double lr_ffm = 0.02, lr_lr = 0.1, lr_nn = 0.01, power_t = 0.5;
  int hash_bits = 0;
  std::uint64_t seed = 1;
  bool lr_only = false;
  bool inference_only = false;
};

struct PredictArgs {
  std::string in, schema, data, requests, predictions;
};

struct EvalArgs {
  std::string predictions;
  std::size_t window = 30000;
};

struct TransferArgs {
  std::string in, out, base, patch;
  int alpha = 4, beta = 4;
};

fw::InputSchema with_bits(const fw::InputSchema& s, int bits) {
  std::vector<bool> numeric;
  for (std::uint32_t i = 0; i < s.field_count(); ++i) numeric.push_back(s.is_numeric(i));
  return fw::InputSchema(s.names(), numeric, bits);
}

std::unique_ptr<fw::LineSource> open_data(const std::string& path, int prefetch, std::unique_ptr<std::ifstream>& keep) {
  if (path == "-") return std::make_unique<fw::StreamLineSource>(std::cin, "stdin");
  if (std::filesystem::is_directory(path)) {
    auto chunks = fw::directory_chunks(path);
    return fw::prefetch_source(std::make_shared<fw::FileChunkProvider>(std::move(chunks)),
                               static_cast<std::size_t>(std::max(prefetch, 1)));
  }
  keep = std::make_unique<std::ifstream>(path);
  if (!*keep) throw fw::IoError("cannot open " + path);
  return std::make_unique<fw::StreamLineSource>(*keep, path);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw fw::IoError("cannot write " + path);
  return out;
}

int run_train(const TrainArgs& a) {
  fw::InputSchema schema = fw::load_schema(a.schema);
  fw::WeightStore store;
  if (!a.in.empty()) {
    store = fw::load_model(fw::read_file(a.in)).store;
    schema = with_bits(schema, store.config().hash_bits);
  } else {
    fw::ModelConfig c;
    c.n_fields = static_cast<std::uint32_t>(schema.field_count());
    c.k = a.k;
    c.hidden_sizes = a.hidden;
    c.lr_ffm = a.lr_ffm;
    c.lr_lr = a.lr_lr;
    c.lr_nn = a.lr_nn;
    c.power_t = a.power_t;
    c.hash_bits = a.hash_bits > 0 ? a.hash_bits : schema.hash_bits();
    c.init_seed = a.seed;
    c.ffm_enabled = !a.lr_only;
    schema = with_bits(schema, c.hash_bits);
    store = fw::init_model(c);
  }

  std::unique_ptr<std::ifstream> keep;
  auto source = open_data(a.data, a.prefetch, keep);
  std::ofstream pred_file;
  fw::TrainOptions o;
  o.n_threads = a.threads;
  o.prefetch_depth = a.prefetch;
  o.eval_window = a.window;
  o.sparse_updates = !a.no_sparse;
  if (!a.predictions.empty()) {
    pred_file = open_out(a.predictions);
    pred_file << std::fixed << std::setprecision(6);
    o.on_prediction = [&](double p, int y) { pred_file << p << '\t' << y << '\n'; };
  }
  const auto backend = fw::select_vector_backend(false, &std::cerr);
  const fw::TrainReport r = a.threads > 1 ? fw::hogwild_train(*source, store, schema, o)
                                          : fw::train_stream(*source, store, schema, o);
  for (const auto& p : r.rolling_auc_series) fw::write_metric(std::cout, p.index, "auc", p.auc);
  fw::write_metric(std::cout, r.examples_seen, "logloss",
                   r.examples_seen ? std::optional<double>(r.progressive_logloss) : std::nullopt);

  fw::write_file(a.out, fw::save_model(store, !a.inference_only));
  std::cerr << "examples " << r.examples_seen << ", parse errors " << r.parse_errors << ", progressive logloss "
            << r.progressive_logloss << ", " << r.wall_time << " s, " << static_cast<std::uint64_t>(r.throughput)
            << " examples/s, " << a.threads << " thread(s), backend " << fw::backend_name(backend) << '\n';
  if (r.io_error) {
    std::cerr << "input failed mid-run: " << *r.io_error << " (model holds the examples seen so far)\n";
    return kData;
  }
  return kOk;
}

int run_predict(const PredictArgs& a) {
  const fw::WeightStore store = fw::load_model(fw::read_file(a.in)).store;
  const fw::InputSchema schema = with_bits(fw::load_schema(a.schema), store.config().hash_bits);
  if (schema.field_count() != store.config().n_fields) {
    throw fw::ContractError("schema has " + std::to_string(schema.field_count()) + " fields, model has " +
                            std::to_string(store.config().n_fields));
  }
  std::ofstream file;
  std::ostream* out = &std::cout;
  if (!a.predictions.empty()) {
    file = open_out(a.predictions);
    out = &file;
  }
  const fw::Kernels& kern = fw::default_kernels();
  if (!a.requests.empty()) {
    std::ifstream in(a.requests);
    if (!in) throw fw::IoError("cannot open " + a.requests);
    fw::ContextCacheRegistry registry;
    for (const auto& req : fw::parse_requests(in, schema)) {
      const auto cache = registry.get(req.context, store, kern);
      fw::write_probabilities(*out, fw::predict_batch(*cache, req.candidates, store, kern));
    }
    std::cerr << "context cache: " << registry.hits() << " hits, " << registry.misses() << " misses\n";
    return kOk;
  }
  std::unique_ptr<std::ifstream> keep;
  auto source = open_data(a.data, 1, keep);
  fw::ForwardState st;
  std::uint64_t n = 0, bad = 0;
  *out << std::fixed << std::setprecision(6);
  while (auto line = source->next()) {
    fw::ParsedExample ex;
    try {
      ex = fw::parse_example(*line, schema);
    } catch (const fw::ParseError& e) {
      ++bad;
      continue;
    }
    fw::forward(ex, store, st, kern);
    *out << fw::predict_proba(st.logit) << '\t' << ex.label << '\n';
    ++n;
  }
  std::cerr << "scored " << n << ", parse errors " << bad << '\n';
  return kOk;
}

int run_eval(const EvalArgs& a) {
  std::ifstream in(a.predictions);
  if (!in) throw fw::IoError("cannot open " + a.predictions);
  std::vector<fw::ScoredLabel> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    double p;
    int y;
    if (!(ls >> p >> y) || (y != 0 && y != 1) || !std::isfinite(p)) {
      throw fw::ParseError("predictions line " + std::to_string(lineno) + ": expected '<score> <label>'");
    }
    pairs.push_back({p, y});
  }
  for (const auto& pt : fw::rolling_auc(pairs, a.window)) fw::write_metric(std::cout, pt.index, "auc", pt.auc);
  const std::uint64_t n = pairs.size();
  fw::write_metric(std::cout, n, "auc_total", fw::auc(pairs));
  fw::write_metric(std::cout, n, "logloss", fw::logloss(pairs));
  std::optional<double> rig;
  if (fw::auc(pairs)) rig = fw::rig(pairs);
  fw::write_metric(std::cout, n, "rig", rig);
  return kOk;
}

int run_quantize(const TransferArgs& a) {
  const fw::WeightStore store = fw::load_model(fw::read_file(a.in)).store;
  const fw::Bytes blob = fw::quantized_inference_blob(store, {a.alpha, a.beta});
  fw::write_file(a.out, blob);
  const auto q = fw::decode_quantized(blob);
  std::cerr << store.layout().params << " weights, w_min " << q.w_min << ", bucket " << q.bucket_size << ", "
            << blob.size() << " bytes\n";
  return kOk;
}

// Without --base the output is raw little-endian float32 weights; with a
// model as --base it is an inference-only model file.
int run_dequantize(const TransferArgs& a) {
  const auto q = fw::decode_quantized(fw::read_file(a.in));
  if (!a.base.empty()) {
    const auto base = fw::load_model(fw::read_file(a.base));
    fw::write_file(a.out, fw::save_model(fw::store_from_blob(q, base.store.config()), false));
    return kOk;
  }
  const std::vector<float> w = fw::dequantize(q);
  fw::write_file(a.out, fw::ByteView(reinterpret_cast<const std::uint8_t*>(w.data()), w.size() * sizeof(float)));
  return kOk;
}

bool has_magic(const fw::Bytes& b, std::string_view magic) {
  return b.size() >= magic.size() && std::equal(magic.begin(), magic.end(), b.begin());
}

// A model file against a quantized base runs the quantize-then-diff
// pipeline; anything else is a plain byte diff.
int run_patch_create(const TransferArgs& a) {
  const fw::Bytes base = fw::read_file(a.base);
  const fw::Bytes next = fw::read_file(a.in);
  fw::Patch p;
  if (has_magic(base, fw::kQuantMagic) && has_magic(next, fw::kModelMagic)) {
    p = fw::quantized_update_pipeline(base, fw::load_model(next).store, {a.alpha, a.beta});
  } else {
    p = fw::create_patch(base, next);
  }
  const fw::Bytes enc = fw::encode_patch(p);
  fw::write_file(a.out, enc);
  std::cerr << p.ops.size() << " ops, " << enc.size() << " bytes for a " << p.target_length << "-byte target\n";
  return kOk;
}

int run_patch_apply(const TransferArgs& a) {
  const fw::Bytes base = fw::read_file(a.base);
  const fw::Patch p = fw::decode_patch(fw::read_file(a.patch));
  fw::write_file(a.out, fw::apply_patch(base, p));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Field-aware factorization machines with online learning"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.footer(kVersion);

  TrainArgs t;
  auto* train = app.add_subcommand("train", "single-pass training with progressive validation");
  train->add_option("--data", t.data, "example file, chunk directory, or - for stdin")->required();
  train->add_option("--schema", t.schema, "schema file")->required();
  train->add_option("--out", t.out, "model file to write")->required();
  auto* warm = train->add_option("--in", t.in, "model file to continue training from");
  train->add_option("--threads", t.threads, "Hogwild workers; 1 trains sequentially")->check(CLI::Range(1, 256));
  train->add_option("--prefetch", t.prefetch, "chunks fetched ahead for directory input")->check(CLI::Range(1, 64));
  train->add_option("--window", t.window, "rolling AUC window")->check(CLI::PositiveNumber);
  train->add_flag("--no-sparse", t.no_sparse, "visit every network weight in backward");
  train->add_option("--predictions", t.predictions, "write progressive '<p>\\t<label>' lines here");
  train->add_flag("--inference-only", t.inference_only, "drop optimizer state from the written model");
  std::vector<CLI::Option*> arch{
      train->add_option("--k", t.k, "latent dimension")->check(CLI::Range(1, 1024)),
      train->add_option("--hidden", t.hidden, "hidden layer widths, e.g. 64,64")->delimiter(','),
      train->add_option("--lr-ffm", t.lr_ffm, "ffm learning rate"),
      train->add_option("--lr-lr", t.lr_lr, "lr learning rate"),
      train->add_option("--lr-nn", t.lr_nn, "network learning rate"),
      train->add_option("--power-t", t.power_t, "AdaGrad power"),
      train->add_option("--hash-bits", t.hash_bits, "feature hash bits, overrides the schema")
          ->check(CLI::Range(fw::kMinHashBits, fw::kMaxHashBits)),
      train->add_option("--seed", t.seed, "initialization seed"),
      train->add_flag("--lr-only", t.lr_only, "logistic block only, no ffm or network"),
  };
  for (auto* o : arch) warm->excludes(o);

  PredictArgs p;
  auto* predict = app.add_subcommand("predict", "score examples or context/candidate requests");
  predict->add_option("--in", p.in, "model file")->required();
  predict->add_option("--schema", p.schema, "schema file")->required();
  auto* pdata = predict->add_option("--data", p.data, "labelled examples; writes '<p>\\t<label>'");
  auto* preq = predict->add_option("--requests", p.requests, "context/candidate requests; writes one p per line");
  pdata->excludes(preq);
  predict->add_option("--predictions", p.predictions, "output file (default stdout)");

  EvalArgs e;
  auto* eval = app.add_subcommand("eval", "rolling AUC, log-loss and RIG of '<p> <label>' lines");
  eval->add_option("--predictions", e.predictions, "predictions file")->required();
  eval->add_option("--window", e.window, "rolling AUC window")->check(CLI::PositiveNumber);

  TransferArgs q;
  auto* quant = app.add_subcommand("quantize", "16-bit inference blob from a model");
  quant->add_option("--in", q.in, "model file")->required();
  quant->add_option("--out", q.out, "quantized blob")->required();
  quant->add_option("--alpha", q.alpha, "decimals for rounding the max up")->check(CLI::Range(0, 9));
  quant->add_option("--beta", q.beta, "decimals for rounding the min down")->check(CLI::Range(0, 9));

  TransferArgs dq;
  auto* dequant = app.add_subcommand("dequantize", "float weights from a quantized blob");
  dequant->add_option("--in", dq.in, "quantized blob")->required();
  dequant->add_option("--out", dq.out, "output file")->required();
  dequant->add_option("--base", dq.base, "model whose config to use; output becomes a model file");

  TransferArgs pc;
  auto* pcreate = app.add_subcommand("patch-create", "byte patch from --base to --in");
  pcreate->add_option("--base", pc.base, "file the receiver holds")->required();
  pcreate->add_option("--in", pc.in, "new file; a model file against a quantized base is quantized first")
      ->required();
  pcreate->add_option("--out", pc.out, "patch file")->required();
  pcreate->add_option("--alpha", pc.alpha)->check(CLI::Range(0, 9));
  pcreate->add_option("--beta", pc.beta)->check(CLI::Range(0, 9));

  TransferArgs pa;
  auto* papply = app.add_subcommand("patch-apply", "apply a patch, verifying both digests");
  papply->add_option("--base", pa.base, "base file")->required();
  papply->add_option("--patch", pa.patch, "patch file")->required();
  papply->add_option("--out", pa.out, "output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return run_train(t);
    if (*predict) {
      if (p.data.empty() && p.requests.empty()) {
        std::cerr << "predict: one of --data or --requests is required\n";
        return kUsage;
      }
      return run_predict(p);
    }
    if (*eval) return run_eval(e);
    if (*quant) return run_quantize(q);
    if (*dequant) return run_dequantize(dq);
    if (*pcreate) return run_patch_create(pc);
    if (*papply) return run_patch_apply(pa);
  } catch (const fw::WorkerError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return exit_code(err.cause());
  } catch (const fw::Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return exit_code(err.kind());
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kData;
  }
  return kUsage;
}

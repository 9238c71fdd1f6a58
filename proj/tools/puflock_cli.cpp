// puflock command-line front end.
//
// Exit codes: 0 success, 1 protocol or crypto failure, 2 usage or format error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

#include "puflock/puflock.hpp"

using namespace puflock;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct CipherFlags {
  unsigned np = 3;
  unsigned nd = 2;
  std::string mode = "exact";
  bool biases = false;

  void attach(CLI::App* app) {
    app->add_option("--np", np, "permutation rounds")->check(CLI::Range(1, 65535));
    app->add_option("--nd", nd, "diffusion rounds")->check(CLI::Range(1, 65535));
    app->add_option("--mode", mode, "float or exact")->check(CLI::IsMember({"float", "exact"}));
    app->add_flag("--biases", biases, "encrypt biases together with the weights");
  }

  CipherConfig config() const {
    CipherConfig c;
    c.permute_rounds = np;
    c.diffusion_rounds = nd;
    c.mode = mode == "float" ? CipherMode::floating : CipherMode::exact;
    c.encrypt_biases = biases;
    return c;
  }
};

std::ostream* open_out(const std::string& path, std::ofstream& file) {
  if (path.empty()) return &std::cout;
  file.open(path);
  if (!file) throw ParameterError("cannot write " + path);
  return &file;
}

bool has_magic(const Bytes& b, const char* magic) { return b.size() >= 4 && std::equal(magic, magic + 4, b.begin()); }

// Key of a device for the challenge id stored in an encrypted container.
SecretKey device_key(const PufDevice& d, const Challenge& c) { return SecretKey(d.reference_response(c)); }

Challenge challenge_for(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Challenge::random(rng);
}

Dataset synthetic_split(std::uint64_t data_seed, bool train) {
  ExperimentSetup s;
  auto all = synth_blobs(s.classes, s.dims, s.per_class, data_seed, s.spread);
  return train ? all.slice(0, s.train_rows) : all.slice(s.train_rows, all.size() - s.train_rows);
}

Dataset load_data(const std::string& path, unsigned classes, std::uint64_t data_seed, bool train) {
  return path.empty() ? synthetic_split(data_seed, train) : load_csv(path, classes);
}

// --- puf ---

int puf_new(std::uint64_t seed, double ber, std::size_t bits, const std::string& out) {
  std::mt19937_64 rng(seed);
  const auto d = new_device(random_secret(rng), calibrate_sigma(ber), bits);
  save_device(out, d);
  std::cout << "device.id=" << to_hex(d.id()) << "\nsigma=" << std::setprecision(9) << d.noise_sigma()
            << "\nresponse_bits=" << d.response_len() << "\n";
  return kOk;
}

int puf_stats(std::uint64_t seed, double ber, unsigned devices, unsigned challenges, unsigned reads) {
  std::mt19937_64 rng(seed);
  std::vector<PufDevice> pop;
  for (unsigned i = 0; i < devices; ++i) pop.push_back(new_device(random_secret(rng), calibrate_sigma(ber)));
  std::vector<Challenge> cs;
  for (unsigned i = 0; i < challenges; ++i) cs.push_back(Challenge::random(rng));
  const auto bias = bit_bias(pop, cs);
  double sum = 0.0;
  for (double b : bias) sum += b;
  std::cout << std::fixed << std::setprecision(6) << "devices=" << devices << "\nchallenges=" << challenges
            << "\ninter_hd_mean=" << inter_device_distance(pop, cs) << "\nber.target=" << ber
            << "\nber.measured=" << measured_ber(pop.front(), cs, reads, rng) << "\nsigma=" << calibrate_sigma(ber)
            << "\nbias.mean=" << sum / static_cast<double>(bias.size())
            << "\nbias.min=" << *std::min_element(bias.begin(), bias.end())
            << "\nbias.max=" << *std::max_element(bias.begin(), bias.end()) << "\n";
  return kOk;
}

// --- code ---

int code_dfree() {
  const auto code = ConvCodeSpec::default_code();
  const auto fd = free_distance(code);
  FuzzyExtractor fe;
  std::cout << "code=(1," << code.n_out() << "," << code.memory() << ")\ngenerators=13,15,17\nd_free=" << fd.d_free
            << "\nr=" << fd.correctable << "\ncatastrophic=" << (is_catastrophic(code) ? 1 : 0)
            << "\nframe_bits=" << fe.frame_len << "\ninfo_bits=" << fe.info_len() << "\n";
  return kOk;
}

int code_roundtrip(std::uint64_t seed, std::size_t errors, unsigned trials, bool burst, bool interleave_on) {
  FuzzyExtractor fe;
  std::mt19937_64 rng(seed);
  unsigned ok = 0;
  for (unsigned t = 0; t < trials; ++t) {
    const auto info = BitVector::random(fe.info_len(), rng);
    auto word = conv_encode(info, fe.code);
    if (interleave_on) word = interleave(word, fe.interleaver);
    if (errors > word.size()) throw ParameterError("more errors than frame bits");
    if (burst) {
      std::uniform_int_distribution<std::size_t> start(0, word.size() - errors);
      const auto s = start(rng);
      for (std::size_t i = 0; i < errors; ++i) word.flip(s + i);
    } else {
      std::vector<std::size_t> pos(word.size());
      std::iota(pos.begin(), pos.end(), 0);
      std::shuffle(pos.begin(), pos.end(), rng);
      for (std::size_t i = 0; i < errors; ++i) word.flip(pos[i]);
    }
    if (interleave_on) word = deinterleave(word, fe.interleaver);
    ok += viterbi_decode(word, fe.code) == info;
  }
  std::cout << "errors=" << errors << "\npattern=" << (burst ? "burst" : "random")
            << "\ninterleave=" << (interleave_on ? 1 : 0) << "\ntrials=" << trials << "\nsuccesses=" << ok
            << "\nfailures=" << trials - ok << "\n";
  return kOk;
}

// --- model ---

int model_train(const std::string& data, unsigned classes, std::uint64_t data_seed, TrainConfig cfg,
                const std::string& out) {
  auto train = load_data(data, classes, data_seed, true);
  ExperimentSetup s;
  std::vector<std::size_t> arch{train.dims};
  arch.insert(arch.end(), s.hidden.begin(), s.hidden.end());
  arch.push_back(train.classes);
  auto m = train_tiny(train, arch, cfg);
  save_model(out, m);
  std::cout << "train.rows=" << train.size() << "\ntrain.accuracy=" << std::fixed << std::setprecision(6)
            << evaluate(m, train).accuracy << "\nlayers=" << m.layers.size() << "\n";
  return kOk;
}

int model_encrypt(const std::string& in, const std::string& device, std::uint64_t seed, const CipherFlags& flags,
                  std::size_t layers, const std::string& out) {
  const auto m = load_model(in);
  const auto d = load_device(device);
  const auto c = challenge_for(seed);
  const auto sel = first_layers(m.layers.size(), layers ? layers : m.layers.size());
  const auto e = encrypt_model(m, device_key(d, c), flags.config(), challenge_id(c), sel);
  save_encrypted(out, e);
  std::cout << "challenge=" << c.hex() << "\nencrypted_layers=" << e.encrypted_count() << "/" << e.layers.size()
            << "\nmode=" << to_string(e.config.mode) << "\n";
  return kOk;
}

int model_decrypt(const std::string& in, const std::string& device, const std::string& out) {
  const auto e = load_encrypted(in);
  const auto d = load_device(device);
  save_model(out, decrypt_model(e, device_key(d, Challenge(e.challenge_id))));
  std::cout << "layers=" << e.layers.size() << "\n";
  return kOk;
}

struct LoadedModel {
  std::optional<ModelWeights> plain;
  std::optional<EncryptedModel> enc;
  std::optional<SecretKey> key;
};

LoadedModel load_any(const std::string& path, const std::string& device) {
  const auto bytes = read_file(path);
  LoadedModel lm;
  if (has_magic(bytes, "PDWE")) {
    lm.enc = load_encrypted_bytes(bytes);
    if (!device.empty()) lm.key = device_key(load_device(device), Challenge(lm.enc->challenge_id));
  } else {
    lm.plain = load_model_bytes(bytes);
  }
  return lm;
}

int model_eval(const std::string& path, const std::string& device, const std::string& data, unsigned classes,
               std::uint64_t data_seed) {
  const auto lm = load_any(path, device);
  const auto test = load_data(data, classes, data_seed, false);
  EvalReport rep;
  if (lm.plain) {
    rep = evaluate(*lm.plain, test);
  } else if (lm.key) {
    rep = evaluate(*lm.enc, &*lm.key, test);
  } else {
    rep = evaluate(ciphertext_as_model(*lm.enc), test);  // no key: ciphertext as weights
    rep.config["key"] = "none";
  }
  std::cout << rep.to_text();
  return kOk;
}

int model_infer(const std::string& path, const std::string& device, const std::string& input, const std::string& data,
                unsigned classes) {
  const auto lm = load_any(path, device);
  std::vector<std::vector<float>> rows;
  if (!input.empty()) {
    std::vector<float> x;
    std::stringstream ss(input);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        x.push_back(std::stof(tok));
      } catch (const std::exception&) {
        throw ParameterError("--input: not a number: '" + tok + "'");
      }
    }
    rows.push_back(std::move(x));
  } else if (!data.empty()) {
    const auto ds = load_csv(data, classes);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      auto r = ds.row(i);
      rows.emplace_back(r.begin(), r.end());
    }
  } else {
    throw ParameterError("infer needs --input or --data");
  }
  const auto view = lm.plain ? std::nullopt : std::optional<ModelWeights>(ciphertext_as_model(*lm.enc));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::vector<double> y;
    if (lm.plain) y = forward(*lm.plain, rows[i]);
    else if (lm.key) y = forward(*lm.enc, &*lm.key, rows[i]);
    else y = forward(*view, rows[i]);
    std::cout << i << "," << argmax(y) << "\n";
  }
  return kOk;
}

// --- attack ---

int attack_finetune(std::uint64_t seed, const CipherFlags& flags, std::size_t layers, std::vector<double> fractions,
                    unsigned keys, FinetuneConfig ft, const std::string& out) {
  for (double f : fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ParameterError("--fraction must be in (0, 1]");
  auto ex = prepare_experiment(ExperimentSetup{});
  const std::size_t total = ex.model.layers.size();
  if (layers == 0 || layers > total) layers = total;
  std::vector<std::size_t> counts;
  for (std::size_t k = 1; k <= layers; ++k) counts.push_back(k);
  ft.seed = seed;
  const auto grid = finetune_grid(ex, flags.config(), fractions, counts, keys, seed, ft);
  std::ofstream file;
  auto& os = *open_out(out, file);
  os << "layers_encrypted,fraction,accuracy\n" << std::fixed;
  for (std::size_t a = 0; a < counts.size(); ++a)
    for (std::size_t b = 0; b < fractions.size(); ++b)
      os << counts[a] << "," << std::setprecision(4) << fractions[b] << "," << std::setprecision(6) << grid[a][b]
         << "\n";
  return kOk;
}

// --- demo ---

struct DemoFlags {
  std::uint64_t seed = 1;
  double ber = 0.01;
  bool impostor = false;
  std::size_t z = 4;
  std::string db;
  std::string device;
  CipherFlags cipher;
};

int demo(DemoFlags f) {
  std::mt19937_64 rng(f.seed);
  const auto secret = random_secret(rng);
  const auto other = random_secret(rng);

  ExperimentSetup setup;
  auto ex = prepare_experiment(setup);
  std::cout << std::fixed << std::setprecision(4) << "model.layers=" << ex.model.layers.size()
            << "\naccuracy.plain=" << ex.plain_accuracy << "\n";

  CrpStore store = f.db.empty() ? CrpStore() : CrpStore(f.db);
  ProviderConfig pcfg;
  pcfg.cipher = f.cipher.config();
  Provider provider(store, ex.model, pcfg, rng());

  DeviceStore saved;
  if (!f.device.empty() && std::filesystem::exists(f.device)) saved = DeviceStore::load(f.device);
  Device honest(new_device(secret, calibrate_sigma(f.ber)), saved, DeviceConfig{}, rng());
  const bool enrolled = store.enrolled(honest.id());
  if (enrolled && honest.store().size() == 0)
    throw ParameterError("device is enrolled in the database but no device store was given");
  std::cout << "device.id=" << to_hex(honest.id()) << "\nber=" << f.ber << "\n";

  TcpListener listener(0);
  std::string server_error;
  std::optional<Phase> provider_phase;
  std::thread server([&] {
    try {
      auto conn = listener.accept();
      if (!enrolled) serve_registration(provider, *conn, f.z);
      provider_phase = serve_provider_session(provider, *conn).phase();
    } catch (const std::exception& e) {
      server_error = e.what();
    }
  });

  auto conn = tcp_connect(listener.port());
  if (!enrolled) {
    const auto err = register_device(honest, *conn);
    std::cout << "registration=" << (err.empty() ? "ok" : err) << "\ncrps.enrolled=" << f.z << "\n";
    if (!err.empty()) {
      conn->close();
      server.join();
      return kFailure;
    }
  } else {
    std::cout << "registration=existing\n";
  }
  std::cout << "crps.unused=" << store.count(honest.id(), false) << "\n";

  std::optional<Device> impostor;
  if (f.impostor) {
    DeviceConfig cfg;
    cfg.claimed_id = honest.id();
    impostor.emplace(new_device(other, calibrate_sigma(f.ber)), honest.store(), cfg, rng());
    std::cout << "impostor=1\n";
  }
  Device& runner = impostor ? *impostor : honest;
  auto session = run_device_session(runner, *conn);
  conn->close();
  server.join();
  if (!f.device.empty()) honest.store().save(f.device);

  std::cout << "session.device=" << to_string(session.phase()) << "\n";
  if (provider_phase) std::cout << "session.provider=" << to_string(*provider_phase) << "\n";
  if (session.phase() != Phase::delivered) {
    std::cout << "failure=" << session.failure() << "\n";
    if (!f.impostor && session.failure() == reason::auth_failed)
      std::cout << "note=key reproduction failed; response noise exceeded the correction capacity\n";
    std::cout << "result=FAIL\n";
    return kFailure;
  }
  const auto keyless = evaluate(ciphertext_as_model(*session.container()), ex.test).accuracy;
  const auto delivered = evaluate(*session.model(), ex.test).accuracy;
  std::cout << "accuracy.ciphertext=" << keyless << "\naccuracy.delivered=" << delivered << "\n";
  const bool pass = std::abs(delivered - ex.plain_accuracy) <= 1e-9;
  std::cout << "result=" << (pass ? "PASS" : "FAIL") << "\n";
  return pass ? kOk : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PUF-keyed model encryption toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 1;
  app.add_option("--seed", seed, "RNG seed")->capture_default_str();
  int rc = kOk;

  // puf
  auto* puf = app.add_subcommand("puf", "simulated PUF devices");
  puf->require_subcommand(1);
  double ber = 0.01;
  std::string out;
  std::size_t bits = kDefaultResponseBits;
  auto* puf_new_cmd = puf->add_subcommand("new", "create a device file");
  puf_new_cmd->add_option("--out", out, "device file")->required();
  puf_new_cmd->add_option("--ber", ber, "target bit-error rate")->check(CLI::Range(0.0, 0.5));
  puf_new_cmd->add_option("--bits", bits, "response length")->check(CLI::PositiveNumber);
  unsigned devices = 100, challenges = 32, reads = 10;
  auto* puf_stats_cmd = puf->add_subcommand("stats", "uniqueness, reliability and bias of a population");
  puf_stats_cmd->add_option("--devices", devices)->check(CLI::Range(2u, 100000u));
  puf_stats_cmd->add_option("--challenges", challenges)->check(CLI::Range(1u, 100000u));
  puf_stats_cmd->add_option("--reads", reads)->check(CLI::Range(1u, 100000u));
  puf_stats_cmd->add_option("--ber", ber)->check(CLI::Range(0.0, 0.5));

  // code
  auto* code = app.add_subcommand("code", "convolutional code and interleaver");
  code->require_subcommand(1);
  auto* dfree_cmd = code->add_subcommand("dfree", "free distance and correction capability");
  std::size_t errors = 4;
  unsigned trials = 1000;
  bool burst = false, no_interleave = false;
  auto* rt_cmd = code->add_subcommand("roundtrip", "encode, corrupt, decode");
  rt_cmd->add_option("--errors", errors, "flipped bits per frame");
  rt_cmd->add_option("--trials", trials)->check(CLI::Range(1u, 10000000u));
  rt_cmd->add_flag("--burst", burst, "contiguous error burst");
  rt_cmd->add_flag("--no-interleave", no_interleave, "bypass the interleaver");

  // model
  auto* model = app.add_subcommand("model", "weight files");
  model->require_subcommand(1);
  std::string model_path, device, data, input;
  unsigned classes = 10;
  std::uint64_t data_seed = 7;
  std::size_t layers = 0;
  TrainConfig tc;
  CipherFlags cflags;
  auto* train_cmd = model->add_subcommand("train", "train the reference MLP");
  train_cmd->add_option("--data", data, "training CSV (default: synthetic blobs)");
  train_cmd->add_option("--classes", classes)->check(CLI::Range(2u, 65535u));
  train_cmd->add_option("--data-seed", data_seed);
  train_cmd->add_option("--epochs", tc.epochs)->check(CLI::Range(1u, 100000u));
  train_cmd->add_option("--lr", tc.lr)->check(CLI::PositiveNumber);
  train_cmd->add_option("--out", out)->required();
  auto* enc_cmd = model->add_subcommand("encrypt", "encrypt with a device response as key");
  enc_cmd->add_option("--model", model_path)->required();
  enc_cmd->add_option("--device", device)->required();
  enc_cmd->add_option("--layers", layers, "encrypt the first k layers (0: all)");
  enc_cmd->add_option("--out", out)->required();
  cflags.attach(enc_cmd);
  auto* dec_cmd = model->add_subcommand("decrypt", "decrypt with the device that encrypted it");
  dec_cmd->add_option("--model", model_path)->required();
  dec_cmd->add_option("--device", device)->required();
  dec_cmd->add_option("--out", out)->required();
  auto* eval_cmd = model->add_subcommand("eval", "accuracy report (key=value)");
  eval_cmd->add_option("--model", model_path)->required();
  eval_cmd->add_option("--device", device, "decrypt-on-load with this device");
  eval_cmd->add_option("--data", data, "test CSV (default: synthetic blobs)");
  eval_cmd->add_option("--classes", classes)->check(CLI::Range(2u, 65535u));
  eval_cmd->add_option("--data-seed", data_seed);
  auto* infer_cmd = model->add_subcommand("infer", "predicted class per input row");
  infer_cmd->add_option("--model", model_path)->required();
  infer_cmd->add_option("--device", device);
  infer_cmd->add_option("--input", input, "comma-separated features");
  infer_cmd->add_option("--data", data, "CSV rows");
  infer_cmd->add_option("--classes", classes)->check(CLI::Range(2u, 65535u));

  // attack
  auto* attack = app.add_subcommand("attack", "attacks on encrypted models");
  attack->require_subcommand(1);
  std::vector<double> fractions{0.01, 0.02, 0.04, 0.06, 0.08, 0.10};
  unsigned keys = 4;
  FinetuneConfig ft;
  auto* ft_cmd = attack->add_subcommand("finetune", "fine-tune ciphertext weights on a data fraction (CSV)");
  ft_cmd->add_option("--fraction", fractions, "training-data fractions")->delimiter(',');
  ft_cmd->add_option("--layers", layers, "largest encrypted-layer count (0: all)");
  ft_cmd->add_option("--keys", keys)->check(CLI::Range(1u, 100000u));
  ft_cmd->add_option("--epochs", ft.epochs)->check(CLI::Range(1u, 100000u));
  ft_cmd->add_option("--lr", ft.lr)->check(CLI::PositiveNumber);
  ft_cmd->add_option("--out", out, "CSV file (default: stdout)");
  cflags.attach(ft_cmd);

  // demo
  DemoFlags df;
  auto* demo_cmd = app.add_subcommand("demo", "enroll, register, deploy over loopback TCP, evaluate");
  demo_cmd->add_option("--ber", df.ber)->check(CLI::Range(0.0, 0.5));
  demo_cmd->add_flag("--impostor", df.impostor, "deploy to a different PUF claiming the same id");
  demo_cmd->add_option("--z", df.z, "CRPs to enroll")->check(CLI::Range(1, 100000));
  demo_cmd->add_option("--db", df.db, "provider CRP database file");
  demo_cmd->add_option("--device", df.device, "device store file (challenge, helper) pairs");
  cflags.attach(demo_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*puf_new_cmd) rc = puf_new(seed, ber, bits, out);
    else if (*puf_stats_cmd) rc = puf_stats(seed, ber, devices, challenges, reads);
    else if (*dfree_cmd) rc = code_dfree();
    else if (*rt_cmd) rc = code_roundtrip(seed, errors, trials, burst, !no_interleave);
    else if (*train_cmd) {
      tc.seed = seed;
      rc = model_train(data, classes, data_seed, tc, out);
    } else if (*enc_cmd) rc = model_encrypt(model_path, device, seed, cflags, layers, out);
    else if (*dec_cmd) rc = model_decrypt(model_path, device, out);
    else if (*eval_cmd) rc = model_eval(model_path, device, data, classes, data_seed);
    else if (*infer_cmd) rc = model_infer(model_path, device, input, data, classes);
    else if (*ft_cmd) rc = attack_finetune(seed, cflags, layers, fractions, keys, ft, out);
    else if (*demo_cmd) {
      df.seed = seed;
      df.cipher = cflags;
      rc = demo(df);
    }
  } catch (const ProtocolError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  } catch (const RangeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return rc;
}

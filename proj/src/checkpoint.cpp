#include "ld3dhs/checkpoint.hpp"

#include "ld3dhs/config.hpp"
#include "ld3dhs/errors.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace ld3dhs {

namespace {

constexpr char kMagic[8] = {'L', 'D', '3', 'D', 'C', 'K', 'P', '1'};

struct NamedArray {
  std::string name;
  const Eigen::MatrixXd* value;
};

void write_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  // Row-major on disk regardless of Eigen's storage order.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  os.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(sizeof(double) * rm.size()));
}

const char* branch_name(Branch b) { return b == Branch::Main ? "main" : "aux"; }

}  // namespace

Checkpoint make_checkpoint(const Model& model, const PrototypeBank* bank, const AdamW* optimizer, int epochs_completed,
                           nlohmann::json meta) {
  Checkpoint c;
  c.model_config = model.config();
  c.taxonomy = model.taxonomy();
  c.params = model.params();
  if (bank) c.bank = *bank;
  if (optimizer) c.optimizer = optimizer->state();
  c.epochs_completed = epochs_completed;
  c.meta = std::move(meta);
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::vector<NamedArray> arrays;
  nlohmann::ordered_json params = nlohmann::ordered_json::array();
  for (const auto& p : ckpt.params) {
    arrays.push_back({"param/" + p.key(), &p.value});
    params.push_back({{"module", p.module}, {"level", p.level}, {"layer", p.layer}});
  }
  nlohmann::ordered_json header;
  header["format"] = "ld3dhs-checkpoint";
  header["version"] = 1;
  header["model"] = to_json(ckpt.model_config);
  header["taxonomy"] = format_taxonomy(ckpt.taxonomy);
  header["epochs_completed"] = ckpt.epochs_completed;
  header["meta"] = ckpt.meta;
  header["params"] = std::move(params);
  if (ckpt.bank) {
    const PrototypeBank& b = *ckpt.bank;
    nlohmann::ordered_json bj;
    bj["dim"] = b.dim();
    bj["beta"] = b.beta();
    std::vector<int> classes;
    nlohmann::ordered_json init = nlohmann::ordered_json::array();
    for (int h = 0; h < b.num_levels(); ++h) {
      classes.push_back(b.num_classes(h));
      for (Branch br : {Branch::Main, Branch::Aux}) {
        arrays.push_back({"bank/" + std::to_string(h) + "/" + branch_name(br), &b.running_state(h, br)});
        init.push_back(b.init_flags(h, br));
      }
    }
    bj["classes"] = classes;
    bj["init"] = std::move(init);
    header["bank"] = std::move(bj);
  }
  if (ckpt.optimizer) {
    const AdamWState& s = *ckpt.optimizer;
    if (s.m.size() != ckpt.params.size() || s.v.size() != ckpt.params.size()) {
      throw std::invalid_argument("optimizer state does not match the parameter set");
    }
    header["optimizer"] = {{"step", s.step}};
    for (std::size_t i = 0; i < s.m.size(); ++i) arrays.push_back({"adam/m/" + ckpt.params[i].key(), &s.m[i]});
    for (std::size_t i = 0; i < s.v.size(); ++i) arrays.push_back({"adam/v/" + ckpt.params[i].key(), &s.v[i]});
  }
  nlohmann::ordered_json index = nlohmann::ordered_json::array();
  for (const auto& a : arrays) index.push_back({{"name", a.name}, {"rows", a.value->rows()}, {"cols", a.value->cols()}});
  header["arrays"] = std::move(index);

  const std::string text = header.dump();
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + tmp.string());
    os.write(kMagic, sizeof kMagic);
    const std::uint64_t len = text.size();
    os.write(reinterpret_cast<const char*>(&len), sizeof len);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& a : arrays) write_matrix(os, *a.value);
    if (!os) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw IoError(path.string() + " is not a checkpoint file");
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!is || len > (1ULL << 32)) throw IoError("corrupt checkpoint header in " + path.string());
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw IoError("truncated checkpoint header in " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  if (header.value("format", "") != "ld3dhs-checkpoint") throw IoError(path.string() + " has an unknown format");

  std::map<std::string, Eigen::MatrixXd> arrays;
  for (const auto& a : header.at("arrays")) {
    const auto rows = a.at("rows").get<Eigen::Index>();
    const auto cols = a.at("cols").get<Eigen::Index>();
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    is.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(sizeof(double) * rm.size()));
    if (!is) throw IoError("truncated checkpoint payload in " + path.string());
    arrays.emplace(a.at("name").get<std::string>(), Eigen::MatrixXd(rm));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes after checkpoint payload in " + path.string());
  auto take = [&](const std::string& name) {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw IoError("checkpoint " + path.string() + " lacks array " + name);
    return it->second;
  };

  Checkpoint c;
  c.model_config = model_config_from_json(header.at("model"));
  c.taxonomy = parse_taxonomy(header.at("taxonomy").get<std::string>());
  c.epochs_completed = header.at("epochs_completed").get<int>();
  c.meta = header.at("meta");
  for (const auto& pj : header.at("params")) {
    Parameter p;
    p.module = pj.at("module").get<std::string>();
    p.level = pj.at("level").get<int>();
    p.layer = pj.at("layer").get<std::string>();
    p.value = take("param/" + p.key());
    c.params.add(std::move(p));
  }
  if (header.contains("bank")) {
    const auto& bj = header.at("bank");
    PrototypeBank bank(bj.at("classes").get<std::vector<int>>(), bj.at("dim").get<int>(), bj.at("beta").get<double>());
    std::size_t k = 0;
    for (int h = 0; h < bank.num_levels(); ++h) {
      for (Branch br : {Branch::Main, Branch::Aux}) {
        bank.restore(h, br, take("bank/" + std::to_string(h) + "/" + branch_name(br)),
                     bj.at("init").at(k++).get<std::vector<bool>>());
      }
    }
    c.bank = std::move(bank);
  }
  if (header.contains("optimizer")) {
    AdamWState s;
    s.step = header.at("optimizer").at("step").get<std::int64_t>();
    for (const auto& p : c.params) s.m.push_back(take("adam/m/" + p.key()));
    for (const auto& p : c.params) s.v.push_back(take("adam/v/" + p.key()));
    c.optimizer = std::move(s);
  }
  return c;
}

Model restore_model(const Checkpoint& ckpt) { return Model(ckpt.model_config, ckpt.taxonomy, ckpt.params); }

}  // namespace ld3dhs

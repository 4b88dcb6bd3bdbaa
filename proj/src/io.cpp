#include "stablerec/io.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <stdexcept>

namespace stablerec {

using nlohmann::json;

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_hex(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

double parse_double(const std::string& s) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin) throw std::invalid_argument("parse_double: '" + s + "'");
  return v;
}

namespace {

json matrix_to_json(const Matrix& m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  json data = json::array();
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) data.push_back(fmt_hex(m(r, c)));
  j["data"] = std::move(data);
  return j;
}

json vector_to_json(const Vector& v) {
  json j;
  j["dim"] = v.size();
  json data = json::array();
  for (Index i = 0; i < v.size(); ++i) data.push_back(fmt_hex(v[i]));
  j["data"] = std::move(data);
  return j;
}

Matrix matrix_from_json(const json& j) {
  const Index rows = j.at("rows").get<Index>();
  const Index cols = j.at("cols").get<Index>();
  const auto& data = j.at("data");
  if (static_cast<Index>(data.size()) != rows * cols)
    throw std::invalid_argument("weight file: matrix entry count mismatch");
  Matrix m(rows, cols);
  std::size_t at = 0;
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c)
      m(r, c) = parse_double(data[at++].get<std::string>());
  return m;
}

Vector vector_from_json(const json& j) {
  const Index dim = j.at("dim").get<Index>();
  const auto& data = j.at("data");
  if (static_cast<Index>(data.size()) != dim)
    throw std::invalid_argument("weight file: vector entry count mismatch");
  Vector v(dim);
  for (Index i = 0; i < dim; ++i) v[i] = parse_double(data[i].get<std::string>());
  return v;
}

}  // namespace

void save_weights(const std::filesystem::path& path, const CellParams& cell,
                  const ReadoutParams* readout) {
  json j;
  j["family"] = family_name(family_of(cell));
  json mats;
  json vecs = json::object();
  if (const auto* lds = std::get_if<LdsParams>(&cell)) {
    mats["W"] = matrix_to_json(lds->W);
    mats["U"] = matrix_to_json(lds->U);
  } else if (const auto* rnn = std::get_if<RnnParams>(&cell)) {
    mats["W"] = matrix_to_json(rnn->W);
    mats["U"] = matrix_to_json(rnn->U);
  } else {
    const auto& l = std::get<LstmParams>(cell);
    mats["W_f"] = matrix_to_json(l.Wf);
    mats["W_i"] = matrix_to_json(l.Wi);
    mats["W_o"] = matrix_to_json(l.Wo);
    mats["W_z"] = matrix_to_json(l.Wz);
    mats["U_f"] = matrix_to_json(l.Uf);
    mats["U_i"] = matrix_to_json(l.Ui);
    mats["U_o"] = matrix_to_json(l.Uo);
    mats["U_z"] = matrix_to_json(l.Uz);
    vecs["b_f"] = vector_to_json(l.bf);
    vecs["b_i"] = vector_to_json(l.bi);
    vecs["b_o"] = vector_to_json(l.bo);
    vecs["b_z"] = vector_to_json(l.bz);
  }
  j["matrices"] = std::move(mats);
  j["vectors"] = std::move(vecs);
  if (readout) {
    json ro;
    ro["C"] = matrix_to_json(readout->C);
    if (readout->has_input_term()) ro["D"] = matrix_to_json(readout->D);
    j["readout"] = std::move(ro);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(1) << "\n";
}

LoadedWeights load_weights(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("weight file parse error in " + path.string() +
                             ": " + e.what());
  }
  const Family fam = family_from_name(j.at("family").get<std::string>());
  const json& mats = j.at("matrices");
  LoadedWeights lw{CellParams{LdsParams{}}, std::nullopt};
  if (fam == Family::lds) {
    lw.cell = LdsParams{matrix_from_json(mats.at("W")), matrix_from_json(mats.at("U"))};
  } else if (fam == Family::rnn) {
    lw.cell = RnnParams{matrix_from_json(mats.at("W")), matrix_from_json(mats.at("U"))};
  } else {
    LstmParams l;
    l.Wf = matrix_from_json(mats.at("W_f"));
    l.Wi = matrix_from_json(mats.at("W_i"));
    l.Wo = matrix_from_json(mats.at("W_o"));
    l.Wz = matrix_from_json(mats.at("W_z"));
    l.Uf = matrix_from_json(mats.at("U_f"));
    l.Ui = matrix_from_json(mats.at("U_i"));
    l.Uo = matrix_from_json(mats.at("U_o"));
    l.Uz = matrix_from_json(mats.at("U_z"));
    const json& vecs = j.at("vectors");
    l.bf = vector_from_json(vecs.at("b_f"));
    l.bi = vector_from_json(vecs.at("b_i"));
    l.bo = vector_from_json(vecs.at("b_o"));
    l.bz = vector_from_json(vecs.at("b_z"));
    lw.cell = std::move(l);
  }
  if (j.contains("readout")) {
    ReadoutParams ro;
    ro.C = matrix_from_json(j["readout"].at("C"));
    if (j["readout"].contains("D")) ro.D = matrix_from_json(j["readout"]["D"]);
    lw.readout = std::move(ro);
  }
  return lw;
}

CsvWriter::CsvWriter(const std::filesystem::path& path,
                     const std::vector<std::string>& header)
    : path_(path), out_(path), columns_(header.size()) {
  if (!out_) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t i = 0; i < header.size(); ++i)
    out_ << header[i] << (i + 1 < header.size() ? "," : "\n");
}

void CsvWriter::row(const std::vector<double>& values) {
  if (values.size() != columns_)
    throw std::invalid_argument("csv row width mismatch");
  for (std::size_t i = 0; i < values.size(); ++i)
    out_ << fmt_g17(values[i]) << (i + 1 < values.size() ? "," : "\n");
}

void CsvWriter::close() { out_.close(); }

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return fnv1a64(ss.str());
}

void write_manifest(const std::filesystem::path& dir,
                    const std::vector<std::filesystem::path>& files) {
  std::ofstream out(dir / "manifest.txt");
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
  for (const auto& f : files) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(hash_file(f)));
    out << buf << "  " << f.filename().string() << "\n";
  }
}

}  // namespace stablerec

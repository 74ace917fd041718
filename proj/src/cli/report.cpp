#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "sphereat/cli/commands.hpp"
#include "sphereat/kv.hpp"

namespace sphereat::cli {

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("missing file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::vector<std::string> kColumns = {"run", "framework", "he", "clean_acc", "robust_acc", "attack", "eps", "steps"};

std::vector<std::string> cells(const ReportRow& r) {
  return {r.run, r.framework, r.he, format_double(r.clean_acc), format_double(r.robust_acc),
          r.attack, format_double(r.eps), std::to_string(r.steps)};
}

}  // namespace

ReportRow summarize_run(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ParseError("not a run directory: " + dir.string());
  std::map<std::string, std::string> cfg;
  for (const auto& e : parse_kv(read_file(dir / "config.resolved"))) cfg[e.key] = e.value;
  const TrainHistory h = read_history_csv(dir / "history.csv");
  if (h.epochs.empty()) throw ParseError(dir.string() + "/history.csv has no epochs");
  auto get = [&](const char* key) {
    auto it = cfg.find(key);
    if (it == cfg.end()) throw ParseError(dir.string() + "/config.resolved lacks " + key);
    return it->second;
  };
  ReportRow r;
  r.run = get("name");
  r.framework = get("train.framework");
  r.he = get("head.mode");
  r.clean_acc = h.epochs.back().clean_acc;
  r.robust_acc = h.epochs.back().robust_acc;
  r.attack = "pgd";
  const std::string eps = get("eval.eps");
  // Budgets such as 8/255 are kept readable in configs.
  if (const auto slash = eps.find('/'); slash != std::string::npos) {
    r.eps = parse_double(eps.substr(0, slash)) / parse_double(eps.substr(slash + 1));
  } else {
    r.eps = parse_double(eps);
  }
  r.steps = static_cast<int>(parse_int(get("eval.steps")));
  return r;
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  for (std::size_t i = 0; i < kColumns.size(); ++i) os << (i ? "," : "") << kColumns[i];
  os << '\n';
  for (const auto& r : rows) {
    const auto c = cells(r);
    for (std::size_t i = 0; i < c.size(); ++i) os << (i ? "," : "") << c[i];
    os << '\n';
  }
  return os.str();
}

std::string report_table(const std::vector<ReportRow>& rows) {
  std::vector<std::vector<std::string>> grid{kColumns};
  for (const auto& r : rows) grid.push_back(cells(r));
  std::vector<std::size_t> width(kColumns.size(), 0);
  for (const auto& line : grid) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  }
  std::ostringstream os;
  for (const auto& line : grid) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      os << (i ? "  " : "") << std::left << std::setw(static_cast<int>(width[i])) << line[i];
    }
    os << '\n';
  }
  return os.str();
}

int cmd_report(const std::vector<fs::path>& dirs, const fs::path& out_csv, std::ostream& out, std::ostream& err) {
  if (dirs.empty()) {
    err << "usage error: report needs at least one run directory\n";
    return kExitUsage;
  }
  std::vector<ReportRow> rows;
  try {
    for (const auto& d : dirs) rows.push_back(summarize_run(d));
  } catch (const std::exception& e) {
    err << "input error: " << e.what() << '\n';
    return kExitUsage;
  }
  const std::string csv = report_csv(rows);
  if (!out_csv.empty()) {
    if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
    std::ofstream(out_csv, std::ios::binary) << csv;
    std::ostringstream meta;
    for (const auto& d : dirs) meta << "run = " << d.string() << '\n';
    const fs::path dir = out_csv.has_parent_path() ? out_csv.parent_path() : fs::path(".");
    if (!fs::exists(dir / "history.csv")) write_run_metadata(dir, meta.str());
  }
  out << report_table(rows);
  return kExitOk;
}

}  // namespace sphereat::cli

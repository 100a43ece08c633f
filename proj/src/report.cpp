#include "segnas/report.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "segnas/metrics.hpp"

namespace segnas {

namespace {

struct LoadedLog {
  std::string path;
  std::string mode;  // taken from the rows
  std::vector<ArchRecord> records;
};

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

double window_mean_final(const std::vector<ArchRecord>& records, std::size_t begin,
                         std::size_t end) {
  double sum = 0;
  for (std::size_t i = begin; i < end; ++i) sum += records[i].final_reward;
  return sum / static_cast<double>(end - begin);
}

// --- tiny deterministic SVG canvas ---------------------------------------

class Svg {
 public:
  Svg(int width, int height) : width_(width), height_(height) {
    body_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
          << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
          << height << "\">\n";
    body_ << "<rect width=\"" << width << "\" height=\"" << height
          << "\" fill=\"white\"/>\n";
  }

  void set_range(double x0, double x1, double y0, double y1) {
    x0_ = x0;
    x1_ = x1;
    y0_ = y0;
    y1_ = y1;
  }

  double px(double x) const {
    return margin_ + (x - x0_) / (x1_ - x0_) * (width_ - 2 * margin_);
  }
  double py(double y) const {
    return height_ - margin_ - (y - y0_) / (y1_ - y0_) * (height_ - 2 * margin_);
  }

  void axes(const std::string& xlabel, const std::string& ylabel) {
    body_ << "<line x1=\"" << margin_ << "\" y1=\"" << height_ - margin_
          << "\" x2=\"" << width_ - margin_ << "\" y2=\"" << height_ - margin_
          << "\" stroke=\"black\"/>\n";
    body_ << "<line x1=\"" << margin_ << "\" y1=\"" << margin_ << "\" x2=\""
          << margin_ << "\" y2=\"" << height_ - margin_ << "\" stroke=\"black\"/>\n";
    text(width_ / 2.0, height_ - 8.0, xlabel, "middle");
    body_ << "<text x=\"14\" y=\"" << height_ / 2.0
          << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 "
          << height_ / 2.0 << ")\">" << ylabel << "</text>\n";
    // y ticks at data range quartiles
    for (int t = 0; t <= 4; ++t) {
      const double v = y0_ + (y1_ - y0_) * t / 4.0;
      body_ << "<line x1=\"" << margin_ - 4 << "\" y1=\"" << py(v) << "\" x2=\""
            << margin_ << "\" y2=\"" << py(v) << "\" stroke=\"black\"/>\n";
      text(margin_ - 6, py(v) + 4, fmt(v, 3), "end");
    }
  }

  void circle(double x, double y, const std::string& color, double r = 2.0) {
    body_ << "<circle cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y)) << "\" r=\""
          << r << "\" fill=\"" << color << "\" fill-opacity=\"0.55\"/>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& points,
                const std::string& color, double width = 2.0) {
    if (points.empty()) return;
    body_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\""
          << width << "\" points=\"";
    for (const auto& [x, y] : points) body_ << fmt(px(x)) << "," << fmt(py(y)) << " ";
    body_ << "\"/>\n";
  }

  void text(double x, double y, const std::string& s,
            const std::string& anchor = "start") {
    body_ << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" text-anchor=\""
          << anchor << "\" font-size=\"12\">" << s << "</text>\n";
  }

  void legend(const std::vector<std::pair<std::string, std::string>>& entries) {
    double y = margin_ + 6;
    for (const auto& [label, color] : entries) {
      body_ << "<rect x=\"" << width_ - margin_ - 110 << "\" y=\"" << y - 9
            << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
      text(width_ - margin_ - 96, y, label);
      y += 16;
    }
  }

  void save(const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    out << body_.str() << "</svg>\n";
  }

 private:
  int width_, height_;
  double margin_ = 46;
  double x0_ = 0, x1_ = 1, y0_ = 0, y1_ = 1;
  std::ostringstream body_;
};

const char* mode_color(const std::string& mode) {
  return mode == "rl" ? "#d62728" : "#1f77b4";
}

}  // namespace

void write_report(const std::vector<std::string>& log_paths,
                  const std::string& out_dir, const ReportOptions& options) {
  if (log_paths.empty()) throw std::invalid_argument("no logs given");
  std::filesystem::create_directories(out_dir);

  std::vector<LoadedLog> logs;
  for (const auto& path : log_paths) {
    LoadedLog log;
    log.path = path;
    log.records = load_search_log(path);
    if (log.records.empty()) throw std::runtime_error(path + ": log holds no records");
    log.mode = log.records.front().mode;
    logs.push_back(std::move(log));
  }

  const int window = options.window;

  // windows.csv
  {
    std::ofstream out(out_dir + "/windows.csv", std::ios::trunc);
    out << "log,mode,window_start,window_end,mean_final_reward,mean_reward1,"
           "advance_rate\n";
    for (const auto& log : logs) {
      for (std::size_t begin = 0; begin < log.records.size(); begin += window) {
        const std::size_t end = std::min(log.records.size(), begin + window);
        double final_sum = 0, r1_sum = 0;
        int advanced = 0;
        for (std::size_t i = begin; i < end; ++i) {
          final_sum += log.records[i].final_reward;
          r1_sum += log.records[i].reward1;
          advanced += log.records[i].continued ? 1 : 0;
        }
        const double n = static_cast<double>(end - begin);
        out << log.path << "," << log.mode << "," << begin << "," << end << ","
            << fmt(final_sum / n) << "," << fmt(r1_sum / n) << ","
            << fmt(advanced / n) << "\n";
      }
    }
  }

  // summary.csv
  {
    std::ofstream out(out_dir + "/summary.csv", std::ios::trunc);
    out << "log,mode,architectures,advance_rate,best_final,last_window_mean,"
           "spearman_stage1_stage2,stage2_count\n";
    for (const auto& log : logs) {
      int advanced = 0;
      double best = 0;
      std::vector<double> r1, r2;
      for (const auto& r : log.records) {
        advanced += r.continued ? 1 : 0;
        best = std::max(best, r.final_reward);
        if (r.reward2) {
          r1.push_back(r.reward1);
          r2.push_back(*r.reward2);
        }
      }
      const std::size_t n = log.records.size();
      const std::size_t last_begin = n > static_cast<std::size_t>(window)
                                         ? n - window
                                         : 0;
      std::string rho = "n/a";
      if (r1.size() >= 2) {
        try {
          rho = fmt(spearman(r1, r2));
        } catch (const std::invalid_argument&) {
        }
      }
      out << log.path << "," << log.mode << "," << n << ","
          << fmt(static_cast<double>(advanced) / static_cast<double>(n)) << ","
          << fmt(best) << "," << fmt(window_mean_final(log.records, last_begin, n))
          << "," << rho << "," << r1.size() << "\n";
    }
  }

  // comparison.csv when both modes are present
  {
    const LoadedLog* rl = nullptr;
    const LoadedLog* random = nullptr;
    for (const auto& log : logs) {
      if (log.mode == "rl" && !rl) rl = &log;
      if (log.mode == "random" && !random) random = &log;
    }
    if (rl && random) {
      auto last_mean = [&](const LoadedLog& log) {
        const std::size_t n = log.records.size();
        const std::size_t begin = n > static_cast<std::size_t>(window) ? n - window : 0;
        return window_mean_final(log.records, begin, n);
      };
      std::ofstream out(out_dir + "/comparison.csv", std::ios::trunc);
      out << "rl_last_window_mean,random_last_window_mean,difference\n";
      const double a = last_mean(*rl), b = last_mean(*random);
      out << fmt(a) << "," << fmt(b) << "," << fmt(a - b) << "\n";
    }
  }

  // rewards.svg: final reward vs index, one colour per mode
  {
    Svg svg(640, 400);
    std::size_t max_n = 0;
    for (const auto& log : logs) max_n = std::max(max_n, log.records.size());
    svg.set_range(0, static_cast<double>(std::max<std::size_t>(max_n, 2) - 1), 0.0, 1.0);
    svg.axes("architecture index", "final reward");
    for (const auto& log : logs) {
      for (const auto& r : log.records)
        svg.circle(r.index, r.final_reward, mode_color(log.mode));
      std::vector<std::pair<double, double>> means;
      for (std::size_t begin = 0; begin < log.records.size(); begin += window) {
        const std::size_t end = std::min(log.records.size(), begin + window);
        means.emplace_back(0.5 * static_cast<double>(begin + end - 1),
                           window_mean_final(log.records, begin, end));
      }
      svg.polyline(means, mode_color(log.mode));
    }
    std::vector<std::pair<std::string, std::string>> entries;
    for (const auto& log : logs) entries.emplace_back(log.mode, mode_color(log.mode));
    svg.legend(entries);
    svg.save(out_dir + "/rewards.svg");
  }

  // stages.svg: reward1 vs reward2 for fully evaluated architectures
  {
    Svg svg(420, 420);
    svg.set_range(0.0, 1.0, 0.0, 1.0);
    svg.axes("stage-1 reward", "stage-2 reward");
    svg.polyline({{0.0, 0.0}, {1.0, 1.0}}, "#cccccc", 1.0);
    for (const auto& log : logs)
      for (const auto& r : log.records)
        if (r.reward2) svg.circle(r.reward1, *r.reward2, mode_color(log.mode), 2.5);
    svg.save(out_dir + "/stages.svg");
  }
}

}  // namespace segnas

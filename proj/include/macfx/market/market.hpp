#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace macfx::market {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr int kAssets = 30;
inline constexpr int kSectors = 6;
inline constexpr int kSectorSize = 5;

struct EnvConstants {
  double c_tx = 0.0005;
  double lambda_dd = 0.02;
  double dd_free = 0.05;  // d0
  double alpha_min = 0.85;
  double alpha_max = 1.0;
  double name_cap = 0.15;
  double sector_cap = 0.35;
  double eps_trade = 0.002;
};

struct PriceSeries {
  std::vector<int> dates;  // synthetic trading-day indices
  Mat simple_returns;      // rows = dates, cols = assets
  std::vector<int> sector_of;

  int days() const { return static_cast<int>(simple_returns.rows()); }
  int assets() const { return static_cast<int>(simple_returns.cols()); }

  /// Universe schema and return sanity; throws StructuralError.
  void validate() const;
};

/// Default universe: asset i belongs to sector i / 5.
std::vector<int> default_sectors();

PriceSeries load_price_series(const std::string& returns_csv, const std::string& sectors_csv);
void save_price_series(const PriceSeries& prices, const std::string& returns_csv, const std::string& sectors_csv);

struct PortfolioState {
  Vec w;
  double w_cash = 0.0;
  double nav = 1.0;
  double peak_nav = 1.0;
  double dd = 0.0;
  int t = 0;

  static PortfolioState initial(int n_assets, int t0);
};

/// Throws ContractError if weights break conservation or the cap structure.
void check_state_invariants(const PortfolioState& s, const std::vector<int>& sector_of, const EnvConstants& k,
                            double tol = 1e-9);

struct Conversion {
  Vec target;             // post-trade risky weights
  double invested = 0.0;  // sum of target
  Vec delta;              // target - previous weights
  double alpha = 0.0;     // invested fraction requested by the action
  Vec pre_deadband;       // capped allocation before the no-trade band
};

Conversion convert_action(const Vec& raw, const PortfolioState& prev, const std::vector<int>& sector_of,
                          const EnvConstants& k);

struct StepResult {
  double reward = 0.0;
  double r_port = 0.0;
  double turnover = 0.0;
  double dd = 0.0;
  double dd_penalty = 0.0;
  double cost_penalty = 0.0;
  PortfolioState next_state;
};

StepResult step(const PortfolioState& state, const Vec& target, const Vec& day_returns,
                const std::vector<int>& sector_of, const EnvConstants& k);

/// Observation built from prices and portfolio state only: per asset the
/// trailing 5-day mean return, trailing 20-day volatility and current weight;
/// then cash, drawdown and the portfolio's trailing 20-day log return.
int observation_dim(int n_assets);
Vec observe(const PriceSeries& prices, const PortfolioState& state, const std::vector<double>& nav_history);

/// Environment over a contiguous slice of days [start, end). The state's t is
/// the absolute index of the next day whose return will be applied.
class MarketEnv {
 public:
  MarketEnv(const PriceSeries& prices, EnvConstants k, int start, int end);

  void reset(int t0);
  bool done() const { return state_.t >= end_; }
  const PortfolioState& state() const { return state_; }
  const EnvConstants& constants() const { return k_; }
  const PriceSeries& prices() const { return *prices_; }
  int start() const { return start_; }
  int end() const { return end_; }

  Vec observation() const;
  Conversion convert(const Vec& raw) const;
  StepResult apply(const Conversion& conv);

 private:
  const PriceSeries* prices_;
  EnvConstants k_;
  int start_;
  int end_;
  PortfolioState state_;
  std::vector<double> nav_history_;
};

}  // namespace macfx::market

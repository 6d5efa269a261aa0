#pragma once

// Consensus problems over an undirected graph: every agent i owns f_i, g_i
// and C_i and the agents agree on x through T x = 0, T the incidence matrix.
//
//   min sum_i f_i(x_i) + g_i(z_i)  s.t.  T x = 0,  C_i x_i - z_i = 0.

#include "palflow/diagnostics.hpp"

#include <algorithm>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>
#include <utility>
#include <vector>

namespace palflow {

struct Agent {
  SmoothBlock f;
  ProximableFunction g;  // dim 0 when the agent has no nonsmooth term
  MatrixXd C;            // dim(g) x dim(x)
};

struct Network {
  int k = 0;
  std::vector<std::pair<int, int>> edges;
  std::vector<Agent> agents;

  Eigen::Index xdim() const { return agents.empty() ? 0 : agents.front().f.dim(); }

  std::vector<std::pair<int, int>> sorted_edges() const {
    std::vector<std::pair<int, int>> e;
    for (auto [a, b] : edges) e.emplace_back(std::min(a, b), std::max(a, b));
    std::sort(e.begin(), e.end());
    return e;
  }

  std::vector<std::vector<int>> neighbors() const {
    std::vector<std::vector<int>> nb(static_cast<std::size_t>(k));
    for (auto [a, b] : sorted_edges()) {
      nb[a].push_back(b);
      nb[b].push_back(a);
    }
    for (auto& v : nb) std::sort(v.begin(), v.end());
    return nb;
  }

  bool connected() const {
    if (k <= 1) return true;
    auto nb = neighbors();
    std::vector<char> seen(static_cast<std::size_t>(k), 0);
    std::queue<int> q;
    q.push(0);
    seen[0] = 1;
    int count = 1;
    while (!q.empty()) {
      int v = q.front();
      q.pop();
      for (int w : nb[v]) {
        if (!seen[w]) {
          seen[w] = 1;
          ++count;
          q.push(w);
        }
      }
    }
    return count == k;
  }

  void validate() const {
    if (k < 1) throw std::invalid_argument("Network: need at least one agent");
    if (static_cast<int>(agents.size()) != k) throw std::invalid_argument("Network: one Agent per vertex");
    std::set<std::pair<int, int>> seen;
    for (auto [a, b] : edges) {
      if (a < 0 || b < 0 || a >= k || b >= k) throw std::invalid_argument("Network: edge endpoint out of range");
      if (a == b) throw std::invalid_argument("Network: self-loop");
      if (!seen.insert({std::min(a, b), std::max(a, b)}).second) throw std::invalid_argument("Network: duplicate edge");
    }
    Eigen::Index d = xdim();
    for (const auto& ag : agents) {
      if (ag.f.dim() != d) throw DimensionError("Network: all agents must share dim(x)");
      if (ag.C.rows() != ag.g.dim() || ag.C.cols() != d) throw DimensionError("Network: C_i must be dim(g_i) x dim(x)");
    }
    if (!connected()) throw std::invalid_argument("Network: graph is disconnected");
  }
};

/// Scalar incidence matrix, one row per edge (sorted), +1 at the smaller
/// endpoint and -1 at the larger.
inline MatrixXd incidence_matrix(const Network& net) {
  if (!net.connected()) throw std::invalid_argument("incidence: graph is disconnected");
  auto e = net.sorted_edges();
  MatrixXd T = MatrixXd::Zero(static_cast<Eigen::Index>(e.size()), net.k);
  for (std::size_t r = 0; r < e.size(); ++r) {
    T(static_cast<Eigen::Index>(r), e[r].first) = 1.0;
    T(static_cast<Eigen::Index>(r), e[r].second) = -1.0;
  }
  return T;
}

/// T kron I_d acting on the stacked agent variables.
inline LinearOperator incidence(const Network& net) {
  MatrixXd T = incidence_matrix(net);
  Eigen::Index d = net.xdim();
  MatrixXd K = MatrixXd::Zero(T.rows() * d, T.cols() * d);
  for (Eigen::Index r = 0; r < T.rows(); ++r) {
    for (Eigen::Index c = 0; c < T.cols(); ++c) {
      if (T(r, c) != 0.0) K.block(r * d, c * d, d, d) = T(r, c) * MatrixXd::Identity(d, d);
    }
  }
  return LinearOperator::from_dense(std::move(K));
}

/// E = [T; C], F = [0; -I], q = 0 with one x block and one z block per agent.
/// Dual layout: lam = (lam_T, lam_C).
inline SaddleProblem assemble_consensus(const Network& net, double mu = 1.0, double alpha = 1.0) {
  net.validate();
  const Eigen::Index d = net.xdim();
  MatrixXd T = incidence_matrix(net);
  const Eigen::Index pt = T.rows() * d;
  Eigen::Index pc = 0;
  for (const auto& a : net.agents) pc += a.g.dim();
  const Eigen::Index p = pt + pc;

  SaddleProblem prob;
  prob.mu = mu;
  prob.alpha = alpha;
  prob.q = VectorXd::Zero(p);
  prob.E = BlockOperator(p);
  prob.F = BlockOperator(p);
  Eigen::Index coff = pt;
  for (int i = 0; i < net.k; ++i) {
    const auto& a = net.agents[i];
    MatrixXd Ei = MatrixXd::Zero(p, d);
    for (Eigen::Index r = 0; r < T.rows(); ++r) {
      if (T(r, i) != 0.0) Ei.block(r * d, 0, d, d) = T(r, i) * MatrixXd::Identity(d, d);
    }
    Eigen::Index ni = a.g.dim();
    if (ni > 0) Ei.block(coff, 0, ni, d) = a.C;
    MatrixXd Fi = MatrixXd::Zero(p, ni);
    if (ni > 0) Fi.block(coff, 0, ni, ni) = -MatrixXd::Identity(ni, ni);
    coff += ni;
    prob.smooth.push_back(a.f);
    prob.g.blocks.push_back(a.g);
    prob.E.push_back(LinearOperator::from_dense(std::move(Ei)));
    prob.F.push_back(LinearOperator::from_dense(std::move(Fi)));
  }
  prob.validate();
  return prob;
}

struct AgentState {
  VectorXd x, z, y, lam1, lam2;
};

/// Stacked decentralized state: all x, all z, all y, all lam1, all lam2.
inline VectorXd pack_agents(const std::vector<AgentState>& s) {
  Eigen::Index n = 0;
  for (const auto& a : s) n += a.x.size() + a.z.size() + a.y.size() + a.lam1.size() + a.lam2.size();
  VectorXd v(n);
  Eigen::Index o = 0;
  auto put = [&](const VectorXd AgentState::*field) {
    for (const auto& a : s) {
      v.segment(o, (a.*field).size()) = a.*field;
      o += (a.*field).size();
    }
  };
  put(&AgentState::x);
  put(&AgentState::z);
  put(&AgentState::y);
  put(&AgentState::lam1);
  put(&AgentState::lam2);
  return v;
}

inline std::vector<AgentState> unpack_agents(const Network& net, const VectorXd& v) {
  std::vector<AgentState> s(static_cast<std::size_t>(net.k));
  const Eigen::Index d = net.xdim();
  Eigen::Index o = 0;
  auto take = [&](VectorXd AgentState::*field, bool xshaped) {
    for (int i = 0; i < net.k; ++i) {
      Eigen::Index len = xshaped ? d : net.agents[i].g.dim();
      s[i].*field = v.segment(o, len);
      o += len;
    }
  };
  take(&AgentState::x, true);
  take(&AgentState::z, false);
  take(&AgentState::y, false);
  take(&AgentState::lam1, true);
  take(&AgentState::lam2, false);
  if (o != v.size()) throw DimensionError("unpack_agents: size mismatch");
  return s;
}

inline std::vector<AgentState> zero_agents(const Network& net) {
  std::vector<AgentState> s(static_cast<std::size_t>(net.k));
  for (int i = 0; i < net.k; ++i) {
    auto ni = net.agents[i].g.dim();
    s[i] = {VectorXd::Zero(net.xdim()), VectorXd::Zero(ni), VectorXd::Zero(ni), VectorXd::Zero(net.xdim()),
            VectorXd::Zero(ni)};
  }
  return s;
}

/// Centralized state of assemble_consensus -> agent states, with
/// lam1 = T' lam_T and lam2 = lam_C.
inline std::vector<AgentState> agents_from_central(const Network& net, const PrimalDualState& c) {
  const Eigen::Index d = net.xdim();
  MatrixXd Tk = incidence(net).dense();
  const Eigen::Index pt = Tk.rows();
  VectorXd lam1 = Tk.transpose() * c.lam.head(pt);
  std::vector<AgentState> s(static_cast<std::size_t>(net.k));
  Eigen::Index zo = 0;
  for (int i = 0; i < net.k; ++i) {
    auto ni = net.agents[i].g.dim();
    s[i].x = c.x.segment(i * d, d);
    s[i].z = c.z.segment(zo, ni);
    s[i].y = c.y.segment(zo, ni);
    s[i].lam1 = lam1.segment(i * d, d);
    s[i].lam2 = c.lam.segment(pt + zo, ni);
    zo += ni;
  }
  return s;
}

/// Agent states -> centralized state. lam_T is the minimum-norm solution of
/// (T kron I)' lam_T = lam1; it is exact whenever lam1 lies in R(T' kron I),
/// which the flow preserves from lam1(0) = 0.
inline PrimalDualState central_from_agents(const Network& net, const std::vector<AgentState>& s) {
  const Eigen::Index d = net.xdim();
  MatrixXd Tk = incidence(net).dense();
  VectorXd lam1(net.k * d);
  Eigen::Index n = 0;
  for (const auto& a : s) n += a.z.size();
  PrimalDualState c{VectorXd(net.k * d), VectorXd(n), VectorXd(n), VectorXd(Tk.rows() + n)};
  Eigen::Index zo = 0;
  for (int i = 0; i < net.k; ++i) {
    auto ni = s[i].z.size();
    c.x.segment(i * d, d) = s[i].x;
    lam1.segment(i * d, d) = s[i].lam1;
    c.z.segment(zo, ni) = s[i].z;
    c.y.segment(zo, ni) = s[i].y;
    c.lam.segment(Tk.rows() + zo, ni) = s[i].lam2;
    zo += ni;
  }
  if (Tk.rows() > 0) c.lam.head(Tk.rows()) = Tk.transpose().completeOrthogonalDecomposition().solve(lam1);
  return c;
}

/// Per-agent derivatives; agent i reads only its own state and the x_j of
/// its neighbours.
inline std::vector<AgentState> decentralized_field(const Network& net, const std::vector<AgentState>& s, double alpha,
                                                   double mu, const std::vector<std::vector<int>>* nb_cache = nullptr) {
  std::vector<std::vector<int>> nb_local;
  if (!nb_cache) nb_local = net.neighbors();
  const auto& nb = nb_cache ? *nb_cache : nb_local;
  const double am = alpha * mu;
  std::vector<AgentState> d(static_cast<std::size_t>(net.k));
  parallel_for(static_cast<std::size_t>(net.k), [&](std::size_t ii) {
    const int i = static_cast<int>(ii);
    const auto& a = net.agents[i];
    const auto& si = s[i];
    auto& di = d[i];
    VectorXd sum = VectorXd::Zero(si.x.size());
    for (int j : nb[i]) sum += s[j].x;
    di.lam1 = alpha * (static_cast<double>(nb[i].size()) * si.x - sum);
    di.lam2 = alpha * (a.C * si.x - si.z);
    di.y = alpha * (si.z - prox(a.g, mu, si.z + mu * si.y));
    di.z = -si.y - di.y / am + si.lam2 + di.lam2 / am;
    di.x = -a.f.gradient(si.x) - si.lam1 - a.C.transpose() * si.lam2 - (di.lam1 + a.C.transpose() * di.lam2) / am;
  });
  return d;
}

/// KKT residual in agent variables; the consensus part uses x'(T'T)x.
inline double decentralized_kkt(const Network& net, const std::vector<AgentState>& s, double mu) {
  auto nb = net.neighbors();
  double acc = 0.0;
  for (int i = 0; i < net.k; ++i) {
    const auto& a = net.agents[i];
    const auto& si = s[i];
    acc += (a.f.gradient(si.x) + si.lam1 + a.C.transpose() * si.lam2).squaredNorm();
    acc += (si.y - si.lam2).squaredNorm();
    acc += (si.z - prox(a.g, mu, si.z + mu * si.y)).squaredNorm();
    acc += (a.C * si.x - si.z).squaredNorm();
    VectorXd lx = static_cast<double>(nb[i].size()) * si.x;
    for (int j : nb[i]) lx -= s[j].x;
    acc += si.x.dot(lx);  // sums to x'Lx = |Tx|^2
  }
  return std::sqrt(std::max(0.0, acc));
}

struct DiscreteHistory {
  std::vector<VectorXd> iterates;  // packed agent states, iterate 0 first
  long messages = 0;
};

/// Forward-Euler iteration with step eta, one synchronous exchange of x per
/// iteration. The z and x updates use the increments of the freshly
/// updated duals.
inline DiscreteHistory run_discrete(const Network& net, std::vector<AgentState> s, double eta, double alpha, double mu,
                                    long iters) {
  if (!(eta > 0.0)) throw std::invalid_argument("run_discrete: eta must be > 0");
  net.validate();
  auto nb = net.neighbors();
  const long per_round = 2 * static_cast<long>(net.sorted_edges().size());
  const double am = alpha * mu;
  DiscreteHistory h;
  h.iterates.push_back(pack_agents(s));
  for (long t = 0; t < iters; ++t) {
    // round 1: every agent broadcasts x_i^t to its neighbours
    std::vector<VectorXd> inbox_sum(static_cast<std::size_t>(net.k));
    for (int i = 0; i < net.k; ++i) {
      inbox_sum[i] = VectorXd::Zero(s[i].x.size());
      for (int j : nb[i]) inbox_sum[i] += s[j].x;
    }
    h.messages += per_round;
    // round 2: local updates
    std::vector<AgentState> nxt(s.size());
    for (int i = 0; i < net.k; ++i) {
      const auto& a = net.agents[i];
      const auto& si = s[i];
      auto& ni = nxt[i];
      ni.lam1 = si.lam1 + eta * alpha * (static_cast<double>(nb[i].size()) * si.x - inbox_sum[i]);
      ni.lam2 = si.lam2 + eta * alpha * (a.C * si.x - si.z);
      ni.y = si.y + eta * alpha * (si.z - prox(a.g, mu, si.z + mu * si.y));
      ni.z = si.z - eta * (si.y - si.lam2) - ((ni.y - si.y) - (ni.lam2 - si.lam2)) / am;
      ni.x = si.x - eta * a.f.gradient(si.x) - eta * (si.lam1 + a.C.transpose() * si.lam2) -
             ((ni.lam1 - si.lam1) + a.C.transpose() * (ni.lam2 - si.lam2)) / am;
    }
    s = std::move(nxt);
    VectorXd packed = pack_agents(s);
    if (!packed.allFinite() || packed.norm() > 1e12) {
      std::ostringstream os;
      os << "run_discrete: divergence at iterate " << (t + 1);
      throw std::runtime_error(os.str());
    }
    h.iterates.push_back(std::move(packed));
  }
  return h;
}

struct DistributedTrajectory {
  std::vector<double> times;
  std::vector<VectorXd> states;  // packed agent states
  std::vector<double> kkt;
  std::vector<double> field_norm;
  std::vector<long> messages_total;
  Termination reason = Termination::t_end;
  std::vector<AgentState> final_state;
  long fevals = 0;
};

/// Integrates the decentralized field. Each field evaluation costs one
/// exchange of x over every edge in both directions.
inline DistributedTrajectory simulate(const Network& net, const std::vector<AgentState>& init, double alpha, double mu,
                                      const IntegratorConfig& cfg) {
  net.validate();
  auto nb = net.neighbors();
  const long per_eval = 2 * static_cast<long>(net.sorted_edges().size());
  auto rhs = [&](double, const VectorXd& v) {
    return pack_agents(decentralized_field(net, unpack_agents(net, v), alpha, mu, &nb));
  };
  auto stop = [&](double, const VectorXd& v) {
    if (cfg.stop_kkt <= 0.0) return false;
    return decentralized_kkt(net, unpack_agents(net, v), mu) < cfg.stop_kkt;
  };
  auto r = integrate_ode(rhs, pack_agents(init), cfg, stop);
  DistributedTrajectory out;
  out.times = std::move(r.t);
  out.field_norm = std::move(r.field_norm);
  for (long f : r.fevals_at) out.messages_total.push_back(f * per_eval);
  out.reason = r.reason;
  out.fevals = r.fevals;
  out.final_state = unpack_agents(net, r.y_final);
  for (const auto& v : r.y) out.kkt.push_back(decentralized_kkt(net, unpack_agents(net, v), mu));
  out.states = std::move(r.y);
  return out;
}

}  // namespace palflow

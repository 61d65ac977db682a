#include "linkfold/mechanism.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <set>

namespace linkfold::mech {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string idx_path(const char* field, std::size_t i) {
  return std::string(field) + "[" + std::to_string(i) + "]";
}

Pose2 inverse(const Pose2& p) { return {rotate(-p.position, -p.angle), -p.angle}; }

// Resolved indices for one joint, precomputed once per solve.
struct JointRef {
  std::size_t la, lb;
  Vec2 sa, sb;
};

struct Layout {
  std::vector<int> var;  // first unknown column per link, -1 for ground
  std::vector<JointRef> joints;
  std::vector<std::size_t> driver_joint;
  int cols = 0;
  int rows = 0;
};

Layout make_layout(const MechanismGraph& mech) {
  Layout L;
  L.var.assign(mech.links().size(), -1);
  for (std::size_t k = 0; k < mech.links().size(); ++k) {
    if (k == mech.ground_index()) continue;
    L.var[k] = L.cols;
    L.cols += 3;
  }
  for (const auto& j : mech.joints())
    L.joints.push_back({mech.link_index(j.a.link), mech.link_index(j.b.link), mech.pivot_local(j.a),
                        mech.pivot_local(j.b)});
  for (const auto& d : mech.drivers()) L.driver_joint.push_back(mech.joint_index(d.joint));
  L.rows = static_cast<int>(2 * L.joints.size() + L.driver_joint.size());
  return L;
}

void evaluate(const Layout& L, const std::vector<Pose2>& poses, const std::vector<double>& target,
              VectorXd& r, MatrixXd* jac) {
  r.resize(L.rows);
  if (jac) jac->setZero(L.rows, L.cols);
  for (std::size_t j = 0; j < L.joints.size(); ++j) {
    const auto& jr = L.joints[j];
    const Vec2 wa = poses[jr.la].apply_direction(jr.sa);
    const Vec2 wb = poses[jr.lb].apply_direction(jr.sb);
    const Vec2 e = poses[jr.la].position + wa - poses[jr.lb].position - wb;
    const int row = static_cast<int>(2 * j);
    r(row) = e.x;
    r(row + 1) = e.y;
    if (!jac) continue;
    if (int c = L.var[jr.la]; c >= 0) {
      (*jac)(row, c) += 1.0;
      (*jac)(row + 1, c + 1) += 1.0;
      (*jac)(row, c + 2) += -wa.y;
      (*jac)(row + 1, c + 2) += wa.x;
    }
    if (int c = L.var[jr.lb]; c >= 0) {
      (*jac)(row, c) -= 1.0;
      (*jac)(row + 1, c + 1) -= 1.0;
      (*jac)(row, c + 2) -= -wb.y;
      (*jac)(row + 1, c + 2) -= wb.x;
    }
  }
  for (std::size_t d = 0; d < L.driver_joint.size(); ++d) {
    const auto& jr = L.joints[L.driver_joint[d]];
    const int row = static_cast<int>(2 * L.joints.size() + d);
    r(row) = wrap_angle(poses[jr.lb].angle - poses[jr.la].angle - target[d]);
    if (!jac) continue;
    if (int c = L.var[jr.lb]; c >= 0) (*jac)(row, c + 2) += 1.0;
    if (int c = L.var[jr.la]; c >= 0) (*jac)(row, c + 2) -= 1.0;
  }
}

double joint_residual(const Layout& L, const VectorXd& r) {
  const auto n = static_cast<Eigen::Index>(2 * L.joints.size());
  double m = 0.0;
  for (Eigen::Index i = 0; i < n; i += 2) m = std::max(m, std::hypot(r(i), r(i + 1)));
  return m;
}

std::vector<double> target_vector(const MechanismGraph& mech, const DriverValues& driven) {
  if (driven.size() != mech.drivers().size())
    throw ValidationError("expected " + std::to_string(mech.drivers().size()) +
                          " driven angles, got " + std::to_string(driven.size()));
  std::vector<double> t;
  for (const auto& d : mech.drivers()) {
    auto it = driven.find(d.name);
    if (it == driven.end()) throw ValidationError("missing driven angle '" + d.name + "'");
    if (!std::isfinite(it->second)) throw ValidationError("non-finite driven angle '" + d.name + "'");
    t.push_back(it->second);
  }
  return t;
}

void apply_step(const Layout& L, std::vector<Pose2>& poses, const VectorXd& dq) {
  for (std::size_t k = 0; k < poses.size(); ++k) {
    const int c = L.var[k];
    if (c < 0) continue;
    poses[k].position.x += dq(c);
    poses[k].position.y += dq(c + 1);
    poses[k].angle += dq(c + 2);
  }
}

enum class NewtonOutcome { converged, stuck, exhausted };

struct NewtonResult {
  NewtonOutcome outcome;
  double residual;
  std::size_t worst_joint;
};

// Levenberg-Marquardt on the stacked closure equations. Iterates past the
// acceptance tolerance toward machine precision so that derivative checks
// against finite differences of the solution are meaningful.
NewtonResult newton(const Layout& L, std::vector<Pose2>& poses, const std::vector<double>& target,
                    const SolverOptions& opt) {
  constexpr double kPolish = 1e-13;
  VectorXd r, rt;
  MatrixXd J;
  evaluate(L, poses, target, r, &J);
  double cost = r.squaredNorm();
  double lambda = opt.initial_damping;
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    if (r.cwiseAbs().maxCoeff() <= kPolish) break;
    const MatrixXd JtJ = J.transpose() * J;
    const VectorXd g = J.transpose() * r;
    bool accepted = false;
    while (lambda < 1e12) {
      MatrixXd A = JtJ;
      A.diagonal().array() += lambda * (1.0 + JtJ.diagonal().array());
      const VectorXd dq = -A.ldlt().solve(g);
      std::vector<Pose2> trial = poses;
      apply_step(L, trial, dq);
      evaluate(L, trial, target, rt, nullptr);
      const double ct = rt.squaredNorm();
      if (std::isfinite(ct) && ct < cost) {
        poses = std::move(trial);
        lambda = std::max(lambda * 0.1, opt.initial_damping);
        accepted = true;
        break;
      }
      if (dq.cwiseAbs().maxCoeff() < 1e-15) break;
      lambda *= 10.0;
    }
    if (!accepted) break;
    evaluate(L, poses, target, r, &J);
    cost = r.squaredNorm();
  }
  for (auto& p : poses) p.angle = wrap_angle(p.angle);
  evaluate(L, poses, target, r, nullptr);
  const double res = std::max(joint_residual(L, r), r.tail(L.driver_joint.size()).size() > 0
                                                        ? r.tail(L.driver_joint.size()).cwiseAbs().maxCoeff()
                                                        : 0.0);
  std::size_t worst = 0;
  double wv = -1.0;
  for (std::size_t j = 0; j < L.joints.size(); ++j) {
    const double v = std::hypot(r(2 * j), r(2 * j + 1));
    if (v > wv) wv = v, worst = j;
  }
  if (res <= opt.position_tolerance) return {NewtonOutcome::converged, res, worst};
  return {it >= opt.max_iterations ? NewtonOutcome::exhausted : NewtonOutcome::stuck, res, worst};
}

double triangle_sign(Vec2 a, Vec2 b, Vec2 c) { return cross(b - a, c - a); }

}  // namespace

// ---------------------------------------------------------------------------

const Pivot* LinkBody::find(std::string_view name) const {
  for (const auto& p : pivots)
    if (p.name == name) return &p;
  return nullptr;
}

MechanismGraph::MechanismGraph(std::vector<LinkBody> links, std::vector<RevoluteJoint> joints,
                               std::vector<Driver> drivers, std::vector<BranchFlag> branch_flags,
                               std::vector<TransmissionPair> monitored)
    : links_(std::move(links)),
      joints_(std::move(joints)),
      drivers_(std::move(drivers)),
      branch_flags_(std::move(branch_flags)),
      monitored_(std::move(monitored)) {
  validate_and_index();
}

void MechanismGraph::validate_and_index() {
  link_index_.clear();
  joint_index_.clear();
  if (links_.empty()) throw ValidationError("mechanism has no links", "links");
  int grounds = 0;
  for (std::size_t i = 0; i < links_.size(); ++i) {
    const auto& l = links_[i];
    const auto path = idx_path("links", i);
    if (l.id.empty()) throw ValidationError("empty link id", path + ".id");
    if (!link_index_.emplace(l.id, i).second)
      throw ValidationError("duplicate link id '" + l.id + "'", path + ".id");
    if (l.pivots.empty()) throw ValidationError("link '" + l.id + "' has no pivots", path + ".pivots");
    std::set<std::string> names;
    for (std::size_t p = 0; p < l.pivots.size(); ++p) {
      if (!names.insert(l.pivots[p].name).second)
        throw ValidationError("duplicate pivot '" + l.pivots[p].name + "'",
                              path + "." + idx_path("pivots", p) + ".name");
      if (!is_finite(l.pivots[p].local))
        throw ValidationError("non-finite pivot", path + "." + idx_path("pivots", p));
    }
    if (l.is_ground) {
      ++grounds;
      ground_ = i;
    }
  }
  if (grounds != 1)
    throw ValidationError("exactly one ground link required, found " + std::to_string(grounds), "links");

  auto check_ref = [&](const PivotRef& r, const std::string& path) {
    auto it = link_index_.find(r.link);
    if (it == link_index_.end()) throw ValidationError("unknown link '" + r.link + "'", path + ".link");
    if (!links_[it->second].find(r.pivot))
      throw ValidationError("unknown pivot '" + r.pivot + "' on link '" + r.link + "'", path + ".pivot");
  };
  for (std::size_t i = 0; i < joints_.size(); ++i) {
    const auto& j = joints_[i];
    const auto path = idx_path("joints", i);
    if (j.id.empty()) throw ValidationError("empty joint id", path + ".id");
    if (!joint_index_.emplace(j.id, i).second)
      throw ValidationError("duplicate joint id '" + j.id + "'", path + ".id");
    check_ref(j.a, path + ".a");
    check_ref(j.b, path + ".b");
    if (j.a.link == j.b.link)
      throw ValidationError("joint '" + j.id + "' connects a link to itself", path);
  }
  std::set<std::string> dnames;
  for (std::size_t i = 0; i < drivers_.size(); ++i) {
    const auto path = idx_path("drivers", i);
    if (!dnames.insert(drivers_[i].name).second)
      throw ValidationError("duplicate driver '" + drivers_[i].name + "'", path + ".name");
    if (!joint_index_.count(drivers_[i].joint))
      throw ValidationError("unknown joint '" + drivers_[i].joint + "'", path + ".joint");
  }
  for (std::size_t i = 0; i < branch_flags_.size(); ++i) {
    const auto path = idx_path("branch_flags", i);
    for (std::size_t k = 0; k < 3; ++k) check_ref(branch_flags_[i].points[k], path + "." + idx_path("points", k));
    if (branch_flags_[i].sign != 1 && branch_flags_[i].sign != -1)
      throw ValidationError("sign must be +1 or -1", path + ".sign");
  }
  for (std::size_t i = 0; i < monitored_.size(); ++i) {
    auto& m = monitored_[i];
    const auto path = idx_path("monitored", i);
    auto jt = joint_index_.find(m.joint);
    if (jt == joint_index_.end()) throw ValidationError("unknown joint '" + m.joint + "'", path + ".joint");
    const auto& j = joints_[jt->second];
    for (auto* far : {&m.far_a, &m.far_b}) {
      const auto fpath = path + (far == &m.far_a ? ".far_a" : ".far_b");
      if (far->link != j.a.link && far->link != j.b.link)
        throw ValidationError("link '" + far->link + "' does not share joint '" + m.joint + "'", fpath + ".link");
      if (far->pivot.empty()) {
        // Binary link: the far pivot is the one not at the joint.
        const auto& l = links_[link_index_.at(far->link)];
        const std::string& near = far->link == j.a.link ? j.a.pivot : j.b.pivot;
        if (l.pivots.size() != 2)
          throw ValidationError("far pivot required for link with " + std::to_string(l.pivots.size()) + " pivots",
                                fpath + ".pivot");
        far->pivot = l.pivots[0].name == near ? l.pivots[1].name : l.pivots[0].name;
      }
      check_ref(*far, fpath);
    }
    if (m.far_a.link == m.far_b.link) throw ValidationError("pair must name two different links", path);
  }

  // Connectivity and fundamental loops via a BFS spanning tree from ground.
  const std::size_t n = links_.size();
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(n);  // (neighbor, joint)
  for (std::size_t i = 0; i < joints_.size(); ++i) {
    const auto a = link_index_.at(joints_[i].a.link), b = link_index_.at(joints_[i].b.link);
    adj[a].push_back({b, i});
    adj[b].push_back({a, i});
  }
  constexpr auto npos = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> parent(n, npos), parent_joint(n, npos), depth(n, 0);
  std::vector<bool> seen(n, false), tree_joint(joints_.size(), false);
  std::deque<std::size_t> q{ground_};
  seen[ground_] = true;
  while (!q.empty()) {
    const auto u = q.front();
    q.pop_front();
    for (auto [v, j] : adj[u]) {
      if (seen[v]) continue;
      seen[v] = true;
      parent[v] = u;
      parent_joint[v] = j;
      depth[v] = depth[u] + 1;
      tree_joint[j] = true;
      q.push_back(v);
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!seen[i])
      throw ValidationError("link '" + links_[i].id + "' is not connected to ground", idx_path("links", i));

  loops_.clear();
  for (std::size_t j = 0; j < joints_.size(); ++j) {
    if (tree_joint[j]) continue;
    auto a = link_index_.at(joints_[j].a.link), b = link_index_.at(joints_[j].b.link);
    std::vector<std::string> up, down;
    while (a != b) {
      if (depth[a] >= depth[b]) {
        up.push_back(joints_[parent_joint[a]].id);
        a = parent[a];
      } else {
        down.push_back(joints_[parent_joint[b]].id);
        b = parent[b];
      }
    }
    std::vector<std::string> loop{joints_[j].id};
    loop.insert(loop.end(), down.begin(), down.end());
    loop.insert(loop.end(), up.rbegin(), up.rend());
    loops_.push_back(std::move(loop));
  }
}

std::size_t MechanismGraph::link_index(std::string_view id) const {
  auto it = link_index_.find(std::string(id));
  if (it == link_index_.end()) throw ValidationError("unknown link '" + std::string(id) + "'");
  return it->second;
}

std::size_t MechanismGraph::joint_index(std::string_view id) const {
  auto it = joint_index_.find(std::string(id));
  if (it == joint_index_.end()) throw ValidationError("unknown joint '" + std::string(id) + "'");
  return it->second;
}

bool MechanismGraph::has_link(std::string_view id) const { return link_index_.count(std::string(id)) > 0; }
bool MechanismGraph::has_joint(std::string_view id) const { return joint_index_.count(std::string(id)) > 0; }

Vec2 MechanismGraph::pivot_local(const PivotRef& ref) const {
  const auto* p = links_[link_index(ref.link)].find(ref.pivot);
  if (!p) throw ValidationError("unknown pivot '" + ref.pivot + "' on link '" + ref.link + "'");
  return p->local;
}

MechanismGraph MechanismGraph::with_drivers(std::vector<Driver> drivers) const {
  return MechanismGraph(links_, joints_, std::move(drivers), branch_flags_, monitored_);
}

MechanismGraph MechanismGraph::with_monitored(std::vector<TransmissionPair> monitored) const {
  return MechanismGraph(links_, joints_, drivers_, branch_flags_, std::move(monitored));
}

const std::vector<std::string>& MechanismGraph::loop_containing(std::string_view joint) const {
  static const std::vector<std::string> none;
  for (const auto& l : loops_)
    if (std::find(l.begin(), l.end(), joint) != l.end()) return l;
  return none;
}

const Pose2& MechanismState::pose(const MechanismGraph& mech, std::string_view link) const {
  return poses.at(mech.link_index(link));
}

Vec2 MechanismState::pivot_world(const MechanismGraph& mech, const PivotRef& ref) const {
  return poses.at(mech.link_index(ref.link)).apply(mech.pivot_local(ref));
}

MobilityReport mobility(const MechanismGraph& mech) {
  MobilityReport r;
  r.links = static_cast<int>(mech.links().size());
  r.lower_pairs = static_cast<int>(mech.joints().size());
  r.higher_pairs = 0;
  r.dof = 3 * (r.links - 1) - 2 * r.lower_pairs - r.higher_pairs;
  return r;
}

MechanismState reference_state(const MechanismGraph& mech) {
  MechanismState s;
  for (const auto& l : mech.links()) s.poses.push_back(l.is_ground ? Pose2{} : l.reference);
  s.residual = closure_residual(mech, s);
  return s;
}

DriverValues driver_values(const MechanismGraph& mech, const MechanismState& state) {
  DriverValues v;
  for (const auto& d : mech.drivers()) {
    const auto& j = mech.joints()[mech.joint_index(d.joint)];
    v[d.name] = wrap_angle(state.pose(mech, j.b.link).angle - state.pose(mech, j.a.link).angle);
  }
  return v;
}

double closure_residual(const MechanismGraph& mech, const MechanismState& state) {
  double m = 0.0;
  for (const auto& j : mech.joints()) m = std::max(m, distance(state.pivot_world(mech, j.a), state.pivot_world(mech, j.b)));
  return m;
}

bool branch_flags_hold(const MechanismGraph& mech, const MechanismState& state) {
  for (const auto& f : mech.branch_flags()) {
    const double s = triangle_sign(state.pivot_world(mech, f.points[0]), state.pivot_world(mech, f.points[1]),
                                   state.pivot_world(mech, f.points[2]));
    if (s * f.sign <= 0.0) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Dyadic decomposition

std::optional<MechanismState> solve_dyadic(const MechanismGraph& mech, const DriverValues& driven,
                                           const MechanismState* hint) {
  const auto target = target_vector(mech, driven);
  const std::size_t n = mech.links().size();
  const Layout L = make_layout(mech);

  // Clusters of links with known relative pose; cluster of ground is absolute.
  std::vector<std::size_t> cluster(n);
  std::vector<Pose2> rel(n);  // link pose in its cluster root frame
  for (std::size_t k = 0; k < n; ++k) cluster[k] = k;
  const std::size_t G = mech.ground_index();
  auto members = [&](std::size_t c) {
    std::vector<std::size_t> m;
    for (std::size_t k = 0; k < n; ++k)
      if (cluster[k] == c) m.push_back(k);
    return m;
  };

  for (std::size_t d = 0; d < L.driver_joint.size(); ++d) {
    const auto& jr = L.joints[L.driver_joint[d]];
    const auto ca = cluster[jr.la], cb = cluster[jr.lb];
    if (ca == cb) return std::nullopt;
    // Pose of link b in cluster a's frame.
    Pose2 b_in_a;
    b_in_a.angle = rel[jr.la].angle + target[d];
    b_in_a.position = rel[jr.la].apply(jr.sa) - rotate(jr.sb, b_in_a.angle);
    const Pose2 xform = b_in_a.compose(inverse(rel[jr.lb]));  // cluster b root -> cluster a root
    // Ground must stay the root of its own cluster.
    if (cb == cluster[G]) {
      const Pose2 back = inverse(xform);
      for (auto k : members(ca)) {
        rel[k] = back.compose(rel[k]);
        cluster[k] = cb;
      }
    } else {
      for (auto k : members(cb)) {
        rel[k] = xform.compose(rel[k]);
        cluster[k] = ca;
      }
    }
  }

  const MechanismState ref = reference_state(mech);
  const MechanismState& proximity = hint ? *hint : ref;
  std::set<std::size_t> known{cluster[G]};
  auto world_of = [&](std::size_t link, Vec2 local) { return rel[link].apply(local); };
  auto root_local = [&](std::size_t link, Vec2 local) { return rel[link].apply(local); };

  auto place = [&](std::size_t c, const Pose2& root) {
    for (auto k : members(c)) rel[k] = root.compose(rel[k]);
    known.insert(c);
  };

  bool progress = true;
  while (progress) {
    progress = false;
    bool all_known = true;
    for (std::size_t k = 0; k < n; ++k)
      if (!known.count(cluster[k])) all_known = false;
    if (all_known) break;

    // Look for a dyad: unknown X and Y joined to each other and each to a known cluster.
    for (std::size_t jxy = 0; jxy < L.joints.size() && !progress; ++jxy) {
      const auto& m = L.joints[jxy];
      const auto X = cluster[m.la], Y = cluster[m.lb];
      if (X == Y || known.count(X) || known.count(Y)) continue;
      auto anchor = [&](std::size_t C, std::size_t skip) -> std::optional<std::pair<Vec2, Vec2>> {
        for (std::size_t j = 0; j < L.joints.size(); ++j) {
          if (j == skip) continue;
          const auto& q = L.joints[j];
          if (cluster[q.la] == C && known.count(cluster[q.lb]))
            return std::pair{root_local(q.la, q.sa), world_of(q.lb, q.sb)};
          if (cluster[q.lb] == C && known.count(cluster[q.la]))
            return std::pair{root_local(q.lb, q.sb), world_of(q.la, q.sa)};
        }
        return std::nullopt;
      };
      const auto ax = anchor(X, jxy), ay = anchor(Y, jxy);
      if (!ax || !ay) continue;
      const Vec2 jx = root_local(m.la, m.sa), jy = root_local(m.lb, m.sb);
      const double rx = distance(jx, ax->first), ry = distance(jy, ay->first);
      if (rx < 1e-12 || ry < 1e-12) return std::nullopt;
      const Vec2 P = ax->second, Q = ay->second;

      struct Candidate {
        Pose2 px, py;
        Vec2 jw;
      };
      std::vector<Candidate> cands;
      for (int sign : {1, -1}) {
        auto jw = circle_circle(P, rx, Q, ry, sign);
        if (!jw) break;
        Candidate c;
        c.jw = *jw;
        c.px.angle = angle_of(*jw - P) - angle_of(jx - ax->first);
        c.px.position = P - rotate(ax->first, c.px.angle);
        c.py.angle = angle_of(*jw - Q) - angle_of(jy - ay->first);
        c.py.position = Q - rotate(ay->first, c.py.angle);
        cands.push_back(c);
      }
      const auto& jid = mech.joints()[jxy].id;
      if (cands.empty())
        throw AssemblyError("loop cannot close at joint '" + jid + "'", mech.loop_containing(jid));

      // Flags that become decidable once this dyad is placed.
      auto flag_score = [&](const Candidate& c) {
        int score = 0;
        for (const auto& f : mech.branch_flags()) {
          std::array<Vec2, 3> w;
          bool decidable = true;
          for (std::size_t i = 0; i < 3; ++i) {
            const auto li = mech.link_index(f.points[i].link);
            const Vec2 loc = root_local(li, mech.pivot_local(f.points[i]));
            if (cluster[li] == X) w[i] = c.px.apply(loc);
            else if (cluster[li] == Y) w[i] = c.py.apply(loc);
            else if (known.count(cluster[li])) w[i] = loc;
            else decidable = false;
          }
          // Only flags touching X or Y vote here.
          bool touches = false;
          for (const auto& p : f.points) {
            const auto cl = cluster[mech.link_index(p.link)];
            touches |= (cl == X || cl == Y);
          }
          if (!decidable || !touches) continue;
          score += triangle_sign(w[0], w[1], w[2]) * f.sign > 0.0 ? 1 : -1;
        }
        return score;
      };
      std::size_t pick = 0;
      if (cands.size() == 2) {
        const Vec2 want = proximity.pivot_world(mech, mech.joints()[jxy].a);
        const double d0 = distance(cands[0].jw, want), d1 = distance(cands[1].jw, want);
        const int s0 = hint ? 0 : flag_score(cands[0]), s1 = hint ? 0 : flag_score(cands[1]);
        if (s0 != s1) pick = s0 > s1 ? 0 : 1;
        else pick = d0 <= d1 ? 0 : 1;
      }
      place(X, cands[pick].px);
      place(Y, cands[pick].py);
      progress = true;
    }

    // A single unknown cluster pinned at two distinct known points.
    for (std::size_t c = 0; c < n && !progress; ++c) {
      if (cluster[c] != c || known.count(c)) continue;
      std::vector<std::pair<Vec2, Vec2>> pins;
      for (const auto& q : L.joints) {
        if (cluster[q.la] == c && known.count(cluster[q.lb])) pins.push_back({root_local(q.la, q.sa), world_of(q.lb, q.sb)});
        if (cluster[q.lb] == c && known.count(cluster[q.la])) pins.push_back({root_local(q.lb, q.sb), world_of(q.la, q.sa)});
      }
      for (std::size_t i = 0; i < pins.size() && !progress; ++i)
        for (std::size_t k = i + 1; k < pins.size() && !progress; ++k) {
          const double dl = distance(pins[i].first, pins[k].first);
          if (dl < 1e-9) continue;
          if (std::abs(dl - distance(pins[i].second, pins[k].second)) > 1e-9) {
            throw AssemblyError("rigid link '" + mech.links()[c].id + "' cannot span its pins",
                                mech.loops().empty() ? std::vector<std::string>{} : mech.loops().front());
          }
          Pose2 root;
          root.angle = angle_of(pins[k].second - pins[i].second) - angle_of(pins[k].first - pins[i].first);
          root.position = pins[i].second - rotate(pins[i].first, root.angle);
          place(c, root);
          progress = true;
        }
    }
  }
  for (std::size_t k = 0; k < n; ++k)
    if (!known.count(cluster[k])) return std::nullopt;

  MechanismState s;
  s.poses = rel;
  s.poses[G] = Pose2{};
  for (auto& p : s.poses) p.angle = wrap_angle(p.angle);
  s.residual = closure_residual(mech, s);
  return s;
}

// ---------------------------------------------------------------------------

MechanismState solve_position(const MechanismGraph& mech, const DriverValues& driven,
                              const MechanismState* warm_start, const SolverOptions& options) {
  const auto target = target_vector(mech, driven);
  const Layout L = make_layout(mech);
  if (warm_start && warm_start->poses.size() != mech.links().size())
    throw ValidationError("warm start has wrong link count");

  MechanismState start = warm_start ? *warm_start : reference_state(mech);
  if (warm_start && closure_residual(mech, start) >= 1.0)
    throw ValidationError("warm start residual must be below 1 mm");
  const auto v0 = driver_values(mech, start);
  std::vector<double> delta;
  double span = 0.0;
  for (std::size_t d = 0; d < target.size(); ++d) {
    delta.push_back(wrap_angle(target[d] - v0.at(mech.drivers()[d].name)));
    span = std::max(span, std::abs(delta.back()));
  }
  const int steps = std::max(1, static_cast<int>(std::ceil(span / options.continuation_step - 1e-12)));

  std::vector<Pose2> poses = start.poses;
  std::vector<double> sub(target.size());
  auto fallback = [&](const NewtonResult& nr) -> MechanismState {
    if (auto s = solve_dyadic(mech, driven, warm_start); s && s->residual <= options.position_tolerance)
      return *s;
    const auto& jid = mech.joints().empty() ? std::string{} : mech.joints()[nr.worst_joint].id;
    if (nr.outcome == NewtonOutcome::exhausted)
      throw ConvergenceError("position solve did not converge, residual " + std::to_string(nr.residual) + " mm",
                             nr.residual);
    throw AssemblyError("no assembly for the driven angles (worst joint '" + jid + "')", mech.loop_containing(jid));
  };
  for (int k = 1; k <= steps; ++k) {
    for (std::size_t d = 0; d < target.size(); ++d)
      sub[d] = k == steps ? target[d] : v0.at(mech.drivers()[d].name) + delta[d] * k / steps;
    const auto nr = newton(L, poses, sub, options);
    if (nr.outcome != NewtonOutcome::converged) return fallback(nr);
  }
  MechanismState out;
  out.poses = std::move(poses);
  out.poses[mech.ground_index()] = Pose2{};
  out.residual = closure_residual(mech, out);
  if (!warm_start && !branch_flags_hold(mech, out)) {
    if (auto s = solve_dyadic(mech, driven, nullptr); s && s->residual <= options.position_tolerance &&
                                                       branch_flags_hold(mech, *s))
      return *s;
    throw AssemblyError("assembly branch does not match the stored branch flags",
                        mech.loops().empty() ? std::vector<std::string>{} : mech.loops().front());
  }
  return out;
}

// ---------------------------------------------------------------------------

double KinematicDerivatives::omega(const MechanismGraph& mech, std::string_view link) const {
  return angular_velocity.at(mech.link_index(link));
}

Vec2 KinematicDerivatives::velocity(const MechanismGraph& mech, const PivotRef& ref) const {
  const auto k = mech.link_index(ref.link);
  const auto& pv = mech.links()[k].pivots;
  for (std::size_t i = 0; i < pv.size(); ++i)
    if (pv[i].name == ref.pivot) return pivot_velocity[k][i];
  throw ValidationError("unknown pivot '" + ref.pivot + "'");
}

KinematicDerivatives kinematic_derivatives(const MechanismGraph& mech, const MechanismState& state,
                                           const DriverValues& driver_rates, const DriverValues& driver_accels) {
  const Layout L = make_layout(mech);
  if (L.rows != L.cols)
    throw ValidationError("driver count does not match mobility: " + std::to_string(L.rows) + " equations, " +
                          std::to_string(L.cols) + " unknowns");
  auto rate_of = [&](const DriverValues& m, const std::string& name) {
    auto it = m.find(name);
    return it == m.end() ? 0.0 : it->second;
  };
  const auto target = [&] {
    std::vector<double> t;
    const auto v = driver_values(mech, state);
    for (const auto& d : mech.drivers()) t.push_back(v.at(d.name));
    return t;
  }();
  VectorXd r;
  MatrixXd J;
  evaluate(L, state.poses, target, r, &J);

  Eigen::JacobiSVD<MatrixXd> svd(J, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double cond = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
  if (!(cond < 1e8)) {
    Eigen::Index row = 0;
    svd.matrixU().col(sv.size() - 1).cwiseAbs().maxCoeff(&row);
    const auto nj = static_cast<Eigen::Index>(2 * L.joints.size());
    const std::string jid =
        row < nj ? mech.joints()[static_cast<std::size_t>(row / 2)].id
                 : mech.drivers()[static_cast<std::size_t>(row - nj)].joint;
    throw SingularityError("singular constraint Jacobian near joint '" + jid + "'", jid);
  }

  const auto nj = 2 * L.joints.size();
  VectorXd rhs_v = VectorXd::Zero(L.rows), rhs_a = VectorXd::Zero(L.rows);
  for (std::size_t d = 0; d < mech.drivers().size(); ++d) {
    rhs_v(static_cast<Eigen::Index>(nj + d)) = rate_of(driver_rates, mech.drivers()[d].name);
    rhs_a(static_cast<Eigen::Index>(nj + d)) = rate_of(driver_accels, mech.drivers()[d].name);
  }
  const VectorXd qd = svd.solve(rhs_v);
  auto omega = [&](std::size_t k) { return L.var[k] < 0 ? 0.0 : qd(L.var[k] + 2); };
  for (std::size_t j = 0; j < L.joints.size(); ++j) {
    const auto& jr = L.joints[j];
    const Vec2 wa = state.poses[jr.la].apply_direction(jr.sa);
    const Vec2 wb = state.poses[jr.lb].apply_direction(jr.sb);
    const Vec2 g = omega(jr.la) * omega(jr.la) * wa - omega(jr.lb) * omega(jr.lb) * wb;
    rhs_a(static_cast<Eigen::Index>(2 * j)) = g.x;
    rhs_a(static_cast<Eigen::Index>(2 * j + 1)) = g.y;
  }
  const VectorXd qdd = svd.solve(rhs_a);

  KinematicDerivatives out;
  const std::size_t n = mech.links().size();
  out.angular_velocity.assign(n, 0.0);
  out.angular_acceleration.assign(n, 0.0);
  out.pivot_velocity.resize(n);
  out.pivot_acceleration.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const int c = L.var[k];
    const Vec2 v0 = c < 0 ? Vec2{} : Vec2{qd(c), qd(c + 1)};
    const Vec2 a0 = c < 0 ? Vec2{} : Vec2{qdd(c), qdd(c + 1)};
    const double w = c < 0 ? 0.0 : qd(c + 2);
    const double al = c < 0 ? 0.0 : qdd(c + 2);
    out.angular_velocity[k] = w;
    out.angular_acceleration[k] = al;
    for (const auto& p : mech.links()[k].pivots) {
      const Vec2 s = state.poses[k].apply_direction(p.local);
      out.pivot_velocity[k].push_back(v0 + w * perp(s));
      out.pivot_acceleration[k].push_back(a0 + al * perp(s) - w * w * s);
    }
  }
  return out;
}

std::vector<double> transmission_angles(const MechanismGraph& mech, const MechanismState& state,
                                        const std::vector<TransmissionPair>& pairs) {
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    const auto& j = mech.joints()[mech.joint_index(p.joint)];
    for (const auto* far : {&p.far_a, &p.far_b})
      if (far->link != j.a.link && far->link != j.b.link)
        throw ValidationError("link '" + far->link + "' does not share joint '" + p.joint + "'");
    const Vec2 c = state.pivot_world(mech, j.a);
    const Vec2 u = state.pivot_world(mech, p.far_a) - c;
    const Vec2 v = state.pivot_world(mech, p.far_b) - c;
    if (norm(u) < 1e-12 || norm(v) < 1e-12)
      throw GeometryError("degenerate link direction at joint '" + p.joint + "'");
    out.push_back(rad2deg(angle_between(u, v)));
  }
  return out;
}

std::vector<SweepEntry> sweep(const MechanismGraph& mech, const std::vector<DriverValues>& grid,
                              const SolverOptions& options) {
  if (grid.empty()) throw ValidationError("sweep grid is empty");
  std::vector<SweepEntry> out;
  out.reserve(grid.size());
  const MechanismState* last = nullptr;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    SweepEntry e;
    try {
      e.state = solve_position(mech, grid[i], last, options);
      e.transmission_deg = transmission_angles(mech, e.state, mech.monitored());
      e.feasible = true;
    } catch (const AssemblyError& ex) {
      if (i == 0) throw;
      e.error = ex.what();
    } catch (const ConvergenceError& ex) {
      if (i == 0) throw AssemblyError(ex.what(), mech.loops().empty() ? std::vector<std::string>{} : mech.loops().front());
      e.error = ex.what();
    }
    out.push_back(std::move(e));
    if (out.back().feasible) last = &out.back().state;
  }
  return out;
}

}  // namespace linkfold::mech

#include "slimpart/partition.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>

#include "slimpart/error.hpp"

namespace slimpart::partition {

namespace {

// Union-find with path compression and union by size. Each root also keeps its
// member list so the negative-constraint veto can scan the smaller side.
class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n), members_(n) {
    std::iota(parent_.begin(), parent_.end(), 0);
    for (std::size_t i = 0; i < n; ++i) members_[i] = {i};
  }

  std::size_t find(std::size_t x) {
    std::size_t r = x;
    while (parent_[r] != r) r = parent_[r];
    while (parent_[x] != r) {
      std::size_t next = parent_[x];
      parent_[x] = r;
      x = next;
    }
    return r;
  }

  const std::vector<std::size_t>& members(std::size_t root) const { return members_[root]; }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (members_[a].size() < members_[b].size()) std::swap(a, b);
    parent_[b] = a;
    members_[a].insert(members_[a].end(), members_[b].begin(), members_[b].end());
    members_[b].clear();
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::vector<std::size_t>> members_;
};

struct Indexed {
  std::vector<std::string> names;
  std::map<std::string, std::size_t> index;
  std::vector<std::vector<std::size_t>> neg_adj;

  Indexed(const std::set<std::string>& exes, const std::set<ExePair>& neg) : names(exes.begin(), exes.end()) {
    for (std::size_t i = 0; i < names.size(); ++i) index[names[i]] = i;
    neg_adj.resize(names.size());
    for (const auto& [a, b] : neg) {
      auto ia = index.find(a);
      auto ib = index.find(b);
      if (ia == index.end() || ib == index.end()) continue;
      neg_adj[ia->second].push_back(ib->second);
      neg_adj[ib->second].push_back(ia->second);
    }
  }

  // True if uniting the blocks of a and b would co-locate a negative pair.
  bool vetoed(DisjointSets& ds, std::size_t a, std::size_t b) const {
    std::size_t ra = ds.find(a);
    std::size_t rb = ds.find(b);
    if (ds.members(ra).size() > ds.members(rb).size()) std::swap(ra, rb);
    for (std::size_t m : ds.members(ra)) {
      for (std::size_t partner : neg_adj[m]) {
        if (ds.find(partner) == rb) return true;
      }
    }
    return false;
  }
};

std::map<std::string, int> canonical_assign(const std::vector<std::string>& names, DisjointSets& ds) {
  // names are sorted, so the first member seen of each block is its minimum.
  std::map<std::size_t, int> root_index;
  std::map<std::string, int> out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto r = ds.find(i);
    auto [it, fresh] = root_index.emplace(r, static_cast<int>(root_index.size()));
    out[names[i]] = it->second;
  }
  return out;
}

DisjointSets from_assign(const Indexed& ix, const std::map<std::string, int>& assign) {
  DisjointSets ds(ix.names.size());
  std::map<int, std::size_t> first;
  for (std::size_t i = 0; i < ix.names.size(); ++i) {
    auto it = assign.find(ix.names[i]);
    if (it == assign.end()) continue;
    auto [f, fresh] = first.emplace(it->second, i);
    if (!fresh) ds.unite(f->second, i);
  }
  return ds;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string basename(const std::string& p) {
  auto pos = p.rfind('/');
  return pos == std::string::npos ? p : p.substr(pos + 1);
}

std::string sanitize(std::string_view s) {
  std::string out;
  for (char c : s) {
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? static_cast<char>(std::tolower(static_cast<unsigned char>(c))) : '_';
  }
  return out.empty() ? "c" : out;
}

}  // namespace

ExePair make_pair(std::string a, std::string b) {
  if (b < a) std::swap(a, b);
  return {std::move(a), std::move(b)};
}

std::string_view to_string(Policy::Kind kind) {
  switch (kind) {
    case Policy::Kind::AllOne: return "all-one";
    case Policy::Kind::OneOne: return "one-one";
    case Policy::Kind::DisjointSubsets: return "subsets";
  }
  return "all-one";
}

Policy parse_policy(std::string_view text, std::string_view source) {
  Policy p;
  bool have_kind = false;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  std::set<std::string> names;
  auto fail = [&](const std::string& why) {
    return Error(ErrorKind::Policy, std::string(source) + ":" + std::to_string(line_no) + ": " + why);
  };
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    auto raw = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    auto line = trim(raw);
    if (line.empty()) continue;
    auto colon = line.find(':');
    if (colon == std::string_view::npos) throw fail("expected 'policy:' or 'subset <name>:'");
    auto head = trim(line.substr(0, colon));
    auto rest = trim(line.substr(colon + 1));
    if (head == "policy") {
      if (have_kind) throw fail("policy declared twice");
      if (rest == "all-one") p.kind = Policy::Kind::AllOne;
      else if (rest == "one-one") p.kind = Policy::Kind::OneOne;
      else if (rest == "subsets") p.kind = Policy::Kind::DisjointSubsets;
      else throw fail("unknown policy '" + std::string(rest) + "'");
      have_kind = true;
    } else if (head.substr(0, 6) == "subset" && head.size() > 6 &&
               std::isspace(static_cast<unsigned char>(head[6]))) {
      Subset s;
      s.name = std::string(trim(head.substr(6)));
      if (s.name.empty()) throw fail("subset without a name");
      if (!names.insert(s.name).second) throw fail("duplicate subset '" + s.name + "'");
      std::istringstream words{std::string(rest)};
      std::string w;
      while (words >> w) s.members.push_back(w);
      p.subsets.push_back(std::move(s));
    } else {
      throw fail("unknown directive '" + std::string(head) + "'");
    }
  }
  if (!have_kind) throw Error(ErrorKind::Policy, std::string(source) + ": missing 'policy:' line");
  if (p.kind != Policy::Kind::DisjointSubsets && !p.subsets.empty()) {
    throw Error(ErrorKind::Policy, std::string(source) + ": subsets given for a non-subsets policy");
  }
  return p;
}

Policy load_policy_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open policy file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_policy(ss.str(), path);
}

Constraints compile_policy(const Policy& p, const std::set<std::string>& exes) {
  Constraints c;
  std::vector<std::string> all(exes.begin(), exes.end());
  switch (p.kind) {
    case Policy::Kind::AllOne:
      for (std::size_t i = 0; i < all.size(); ++i)
        for (std::size_t j = i + 1; j < all.size(); ++j) c.pos.insert({all[i], all[j]});
      break;
    case Policy::Kind::OneOne:
      for (std::size_t i = 0; i < all.size(); ++i)
        for (std::size_t j = i + 1; j < all.size(); ++j) c.neg.insert({all[i], all[j]});
      break;
    case Policy::Kind::DisjointSubsets: {
      std::map<std::string, std::string> owner;
      for (const auto& s : p.subsets) {
        for (const auto& m : s.members) {
          if (!exes.count(m)) {
            throw Error(ErrorKind::Policy, "unknown executable '" + m + "' in subset '" + s.name + "'");
          }
          auto [it, fresh] = owner.emplace(m, s.name);
          if (!fresh && it->second != s.name) {
            throw Error(ErrorKind::Policy, "overlapping subsets: '" + m + "' is in both '" + it->second +
                                               "' and '" + s.name + "'");
          }
        }
      }
      for (std::size_t i = 0; i < p.subsets.size(); ++i) {
        std::set<std::string> si(p.subsets[i].members.begin(), p.subsets[i].members.end());
        for (auto a = si.begin(); a != si.end(); ++a)
          for (auto b = std::next(a); b != si.end(); ++b) c.pos.insert(make_pair(*a, *b));
        for (std::size_t j = i + 1; j < p.subsets.size(); ++j)
          for (const auto& a : si)
            for (const auto& b : p.subsets[j].members) c.neg.insert(make_pair(a, b));
      }
      break;
    }
  }
  return c;
}

std::vector<std::vector<std::string>> PartitionMap::blocks() const {
  std::vector<std::vector<std::string>> out(static_cast<std::size_t>(count()));
  for (const auto& [exe, idx] : assign) out[static_cast<std::size_t>(idx)].push_back(exe);
  return out;
}

int PartitionMap::count() const {
  int n = 0;
  for (const auto& [exe, idx] : assign) n = std::max(n, idx + 1);
  return n;
}

PartitionMap initial_partition(const std::set<std::string>& exes, const Constraints& c) {
  for (const auto& [a, b] : c.neg) {
    if (a == b) throw Error(ErrorKind::Precondition, "negative constraint is reflexive: " + a);
  }
  Indexed ix(exes, c.neg);
  DisjointSets ds(ix.names.size());
  std::vector<std::pair<std::size_t, std::size_t>> pos;
  for (const auto& [a, b] : c.pos) {
    auto ia = ix.index.find(a);
    auto ib = ix.index.find(b);
    if (ia != ix.index.end() && ib != ix.index.end()) pos.emplace_back(ia->second, ib->second);
  }
  for (bool changed = true; changed;) {
    changed = false;
    for (auto [a, b] : pos) {
      if (ds.find(a) == ds.find(b) || ix.vetoed(ds, a, b)) continue;
      ds.unite(a, b);
      changed = true;
    }
  }
  PartitionMap pm;
  pm.assign = canonical_assign(ix.names, ds);
  for (auto [a, b] : pos) {
    if (ds.find(a) != ds.find(b)) pm.unsatisfied.push_back(make_pair(ix.names[a], ix.names[b]));
  }
  return pm;
}

PartitionMap refine_with_callgraph(const PartitionMap& pm, const attribution::CallGraph& graph,
                                   const std::set<ExePair>& neg) {
  std::set<std::string> exes;
  for (const auto& [e, idx] : pm.assign) exes.insert(e);
  Indexed ix(exes, neg);
  DisjointSets ds = from_assign(ix, pm.assign);
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (const auto& [edge, n] : graph.edges) {
    auto ia = ix.index.find(edge.first);
    auto ib = ix.index.find(edge.second);
    if (ia == ix.index.end() || ib == ix.index.end() || ia->second == ib->second) continue;
    edges.emplace_back(ia->second, ib->second);
  }
  for (bool changed = true; changed;) {
    changed = false;
    for (auto [a, b] : edges) {
      if (ds.find(a) == ds.find(b) || ix.vetoed(ds, a, b)) continue;
      ds.unite(a, b);
      changed = true;
    }
  }
  PartitionMap out;
  out.assign = canonical_assign(ix.names, ds);
  for (const auto& [a, b] : pm.unsatisfied) {
    if (ds.find(ix.index.at(a)) != ds.find(ix.index.at(b))) out.unsatisfied.emplace_back(a, b);
  }
  for (auto [a, b] : edges) {
    if (ds.find(a) != ds.find(b)) out.blocked.emplace_back(ix.names[a], ix.names[b]);
  }
  return out;
}

PartitionResult partition(const std::set<std::string>& exes, const attribution::CallGraph& graph,
                          const Policy& p) {
  PartitionResult r;
  r.constraints = compile_policy(p, exes);
  auto pm = refine_with_callgraph(initial_partition(exes, r.constraints), graph, r.constraints.neg);

  if (p.kind == Policy::Kind::DisjointSubsets) {
    std::set<std::string> named;
    for (const auto& s : p.subsets) named.insert(s.members.begin(), s.members.end());
    for (const auto& e : exes) {
      if (!named.count(e)) r.dont_care.push_back(e);
    }
    // A don't-care left alone in its block joins the block of its most
    // frequent caller. Don't-cares carry no negative constraints, so the call
    // graph fixpoint normally merges them already.
    bool moved = false;
    for (const auto& d : r.dont_care) {
      const int own = pm.assign.at(d);
      auto members = std::count_if(pm.assign.begin(), pm.assign.end(),
                                   [&](const auto& kv) { return kv.second == own; });
      if (members != 1) continue;
      std::map<int, std::size_t> callers;
      for (const auto& [edge, n] : graph.edges) {
        if (edge.second == d && edge.first != d && pm.assign.count(edge.first)) {
          callers[pm.assign.at(edge.first)] += n;
        }
      }
      if (callers.empty()) continue;
      auto best = std::max_element(callers.begin(), callers.end(), [](const auto& x, const auto& y) {
        return x.second < y.second || (x.second == y.second && x.first > y.first);
      });
      pm.assign[d] = best->first;
      moved = true;
    }
    if (moved) {
      // Re-canonicalize and recompute blocked edges.
      Indexed ix(exes, r.constraints.neg);
      DisjointSets ds = from_assign(ix, pm.assign);
      PartitionMap again;
      again.assign = canonical_assign(ix.names, ds);
      again.unsatisfied = pm.unsatisfied;
      for (const auto& [edge, n] : graph.edges) {
        if (edge.first != edge.second && again.assign.count(edge.first) && again.assign.count(edge.second) &&
            again.assign.at(edge.first) != again.assign.at(edge.second)) {
          again.blocked.push_back(edge);
        }
      }
      pm = std::move(again);
    }
  }

  // Invariants: blocks cover the executables and keep negative pairs apart.
  if (pm.assign.size() != exes.size()) throw Error(ErrorKind::Invariant, "partition does not cover E");
  for (const auto& [a, b] : r.constraints.neg) {
    if (pm.assign.at(a) == pm.assign.at(b)) {
      throw Error(ErrorKind::Invariant, "negative pair co-located: " + a + ", " + b);
    }
  }
  r.map = std::move(pm);
  return r;
}

std::vector<std::string> container_names(const PartitionMap& pm, const Policy& p) {
  auto blocks = pm.blocks();
  std::vector<std::string> names(blocks.size());
  std::map<std::string, std::string> subset_of;
  for (const auto& s : p.subsets)
    for (const auto& m : s.members) subset_of[m] = s.name;
  std::set<std::string> used;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    std::string name;
    for (const auto& m : blocks[i]) {
      if (auto it = subset_of.find(m); it != subset_of.end()) {
        name = sanitize(it->second);
        break;
      }
    }
    if (name.empty()) {
      name = "c" + std::to_string(i);
      if (!blocks[i].empty()) name += "-" + sanitize(basename(blocks[i].front()));
    }
    while (!used.insert(name).second) name += "_";
    names[i] = name;
  }
  return names;
}

}  // namespace slimpart::partition

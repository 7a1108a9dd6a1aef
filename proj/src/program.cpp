#include "pdsg/program.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace pdsg {

using nlohmann::json;
using nlohmann::ordered_json;

IrError::IrError(std::string location, const std::string &message)
    : std::runtime_error(location.empty() ? message : location + ": " + message),
      location_(std::move(location)) {}

bool Function::is_leaf() const {
  return std::none_of(blocks.begin(), blocks.end(),
                      [](const BasicBlock &b) { return b.callsite.has_value(); });
}

bool Function::is_exit(BlockId b) const {
  return std::binary_search(exit_blocks.begin(), exit_blocks.end(), b);
}

std::vector<CallsiteId> Function::callsites() const {
  std::vector<CallsiteId> out;
  for (const auto &b : blocks)
    if (b.callsite)
      out.push_back(b.callsite->id);
  return out;
}

bool Program::operator==(const Program &other) const {
  return name == other.name && functions == other.functions && entry == other.entry &&
         page_size == other.page_size;
}

std::optional<FuncId> Program::find_function(std::string_view fname) const {
  for (FuncId f = 0; f < functions.size(); ++f)
    if (functions[f].name == fname)
      return f;
  return std::nullopt;
}

const Callsite *Program::callsite(CallsiteId id) const {
  if (id == kRootCallsite)
    return &root_;
  if (id >= sites_.size() || !sites_[id])
    return nullptr;
  const auto &loc = *sites_[id];
  return &*functions[loc.function].blocks[loc.block].callsite;
}

std::optional<CallsiteLocation> Program::location_of(CallsiteId id) const {
  if (id == kRootCallsite || id >= sites_.size())
    return std::nullopt;
  return sites_[id];
}

std::vector<bool> reachable_blocks(const Function &f) {
  std::vector<bool> seen(f.blocks.size(), false);
  std::vector<BlockId> stack{f.entry_block};
  seen[f.entry_block] = true;
  while (!stack.empty()) {
    BlockId b = stack.back();
    stack.pop_back();
    for (BlockId s : f.blocks[b].successors)
      if (!seen[s]) {
        seen[s] = true;
        stack.push_back(s);
      }
  }
  return seen;
}

namespace {

std::string fn_loc(std::size_t f) { return "functions[" + std::to_string(f) + "]"; }

// Blocks from which an exit block is reachable.
std::vector<bool> reaches_exit(const Function &f) {
  std::vector<bool> ok(f.blocks.size(), false);
  std::deque<BlockId> work;
  for (BlockId e : f.exit_blocks) {
    ok[e] = true;
    work.push_back(e);
  }
  while (!work.empty()) {
    BlockId b = work.front();
    work.pop_front();
    for (BlockId p : f.blocks[b].predecessors)
      if (!ok[p]) {
        ok[p] = true;
        work.push_back(p);
      }
  }
  return ok;
}

} // namespace

void Program::finalize() {
  if (functions.empty())
    throw IrError("functions", "program has no functions");
  if (page_size == 0)
    throw IrError("page_size", "must be positive");
  if (entry >= functions.size())
    throw IrError("entry", "entry function does not exist");

  std::set<std::string> names;
  CallsiteId max_id = 0;
  for (std::size_t fi = 0; fi < functions.size(); ++fi) {
    auto &fn = functions[fi];
    if (!names.insert(fn.name).second)
      throw IrError(fn_loc(fi) + ".name", "duplicate function '" + fn.name + "'");
    if (fn.blocks.empty())
      throw IrError(fn_loc(fi) + ".blocks", "function has no blocks");
    if (fn.size_bytes == 0)
      throw IrError(fn_loc(fi) + ".size_bytes", "must be positive");
    if (!fn.param_values.empty() && fn.param_values.size() != fn.params.size())
      throw IrError(fn_loc(fi) + ".param_values", "one domain per parameter required");
    for (std::size_t pi = 0; pi < fn.param_values.size(); ++pi)
      if (fn.param_values[pi].empty())
        throw IrError(fn_loc(fi) + ".param_values[" + std::to_string(pi) + "]",
                      "empty domain");
    if (fn.entry_block >= fn.blocks.size())
      throw IrError(fn_loc(fi) + ".entry_block", "unknown block");

    for (auto &b : fn.blocks)
      b.predecessors.clear();
    for (BlockId b = 0; b < fn.blocks.size(); ++b) {
      auto &blk = fn.blocks[b];
      std::set<BlockId> uniq;
      for (BlockId s : blk.successors) {
        if (s >= fn.blocks.size())
          throw IrError(fn_loc(fi) + ".blocks[" + std::to_string(b) + "].succ",
                        "unknown block");
        if (!uniq.insert(s).second)
          throw IrError(fn_loc(fi) + ".blocks[" + std::to_string(b) + "].succ",
                        "duplicate successor");
        fn.blocks[s].predecessors.push_back(b);
      }
      if (blk.callsite) {
        auto &cs = *blk.callsite;
        std::string where = fn_loc(fi) + ".blocks[" + std::to_string(b) + "].callsite";
        if (cs.id == kRootCallsite)
          throw IrError(where + ".id", "callsite id 0 is reserved for the root callsite");
        if (cs.callees.empty())
          throw IrError(where + ".callees", "callsite has no callees");
        std::sort(cs.callees.begin(), cs.callees.end());
        cs.callees.erase(std::unique(cs.callees.begin(), cs.callees.end()), cs.callees.end());
        for (FuncId c : cs.callees)
          if (c >= functions.size())
            throw IrError(where + ".callees", "unknown callee");
        if (cs.kind == CallKind::direct && cs.callees.size() > 1)
          throw IrError(where + ".kind", "direct callsite with several callees");
        max_id = std::max(max_id, cs.id);
      }
    }
    for (auto &b : fn.blocks)
      std::sort(b.predecessors.begin(), b.predecessors.end());

    std::sort(fn.exit_blocks.begin(), fn.exit_blocks.end());
    fn.exit_blocks.erase(std::unique(fn.exit_blocks.begin(), fn.exit_blocks.end()),
                         fn.exit_blocks.end());
    for (BlockId e : fn.exit_blocks) {
      if (e >= fn.blocks.size())
        throw IrError(fn_loc(fi) + ".exit_blocks", "unknown block");
      if (!fn.blocks[e].successors.empty())
        throw IrError(fn_loc(fi) + ".exit_blocks",
                      "exit block '" + fn.blocks[e].name + "' has successors");
    }
    for (BlockId b = 0; b < fn.blocks.size(); ++b)
      if (fn.blocks[b].successors.empty() && !fn.is_exit(b))
        throw IrError(fn_loc(fi) + ".exit_blocks",
                      "block '" + fn.blocks[b].name + "' has no successors but is not an exit");
    auto ok = reaches_exit(fn);
    for (BlockId b = 0; b < fn.blocks.size(); ++b)
      if (!ok[b])
        throw IrError(fn_loc(fi) + ".blocks[" + std::to_string(b) + "]",
                      "block '" + fn.blocks[b].name + "' cannot reach an exit");
  }

  sites_.assign(static_cast<std::size_t>(max_id) + 1, std::nullopt);
  callers_.assign(functions.size(), {});
  callsite_ids_ = {kRootCallsite};
  callers_[entry].push_back(kRootCallsite);
  for (FuncId fi = 0; fi < functions.size(); ++fi)
    for (BlockId b = 0; b < functions[fi].blocks.size(); ++b)
      if (const auto &cs = functions[fi].blocks[b].callsite) {
        if (sites_[cs->id])
          throw IrError(fn_loc(fi) + ".blocks[" + std::to_string(b) + "].callsite.id",
                        "duplicate callsite id " + std::to_string(cs->id));
        sites_[cs->id] = CallsiteLocation{fi, b};
        callsite_ids_.push_back(cs->id);
        for (FuncId c : cs->callees)
          callers_[c].push_back(cs->id);
      }
  std::sort(callsite_ids_.begin(), callsite_ids_.end());
  for (auto &v : callers_)
    std::sort(v.begin(), v.end());
  root_ = Callsite{kRootCallsite, {entry}, CallKind::direct};

  auto costs = termination_costs(*this);
  for (FuncId f : reachable_functions(*this))
    if (costs[f] == kUnbounded)
      throw IrError(fn_loc(f), "function '" + functions[f].name + "' can never return");
}

std::vector<FuncId> reachable_functions(const Program &p) {
  std::vector<bool> seen(p.functions.size(), false);
  std::vector<FuncId> stack{p.entry};
  seen[p.entry] = true;
  while (!stack.empty()) {
    FuncId f = stack.back();
    stack.pop_back();
    for (const auto &b : p.functions[f].blocks)
      if (b.callsite)
        for (FuncId c : b.callsite->callees)
          if (!seen[c]) {
            seen[c] = true;
            stack.push_back(c);
          }
  }
  std::vector<FuncId> out;
  for (FuncId f = 0; f < seen.size(); ++f)
    if (seen[f])
      out.push_back(f);
  return out;
}

std::vector<std::uint32_t> termination_costs(const Program &p) {
  // cost(f) = min over entry->exit paths of the max per-block need, where a
  // block's need is 1 + min callee cost if it holds a callsite, else 0.
  // Costs only ever decrease, so iterate to the fixpoint.
  std::vector<std::uint32_t> cost(p.functions.size(), kUnbounded);
  auto need = [&](const BasicBlock &b) -> std::uint32_t {
    if (!b.callsite)
      return 0;
    std::uint32_t best = kUnbounded;
    for (FuncId c : b.callsite->callees)
      best = std::min(best, cost[c]);
    return best == kUnbounded ? kUnbounded : best + 1;
  };
  bool changed = true;
  while (changed) {
    changed = false;
    for (FuncId fi = 0; fi < p.functions.size(); ++fi) {
      const auto &fn = p.functions[fi];
      // Bottleneck shortest path: bcost[b] = max(need(b), min succ bcost).
      std::vector<std::uint32_t> bcost(fn.blocks.size(), kUnbounded);
      bool inner = true;
      while (inner) {
        inner = false;
        for (BlockId b = 0; b < fn.blocks.size(); ++b) {
          std::uint32_t via = kUnbounded;
          if (fn.is_exit(b))
            via = 0;
          for (BlockId s : fn.blocks[b].successors)
            via = std::min(via, bcost[s]);
          std::uint32_t v = via == kUnbounded ? kUnbounded : std::max(need(fn.blocks[b]), via);
          if (v < bcost[b]) {
            bcost[b] = v;
            inner = true;
          }
        }
      }
      if (bcost[fn.entry_block] < cost[fi]) {
        cost[fi] = bcost[fn.entry_block];
        changed = true;
      }
    }
  }
  return cost;
}

// ---------------------------------------------------------------------------
// Loading

namespace {

struct RawCallsite {
  std::optional<CallsiteId> id;
  std::vector<std::string> callees;
  std::optional<CallKind> kind;
  std::string where;
};

struct RawBlock {
  std::string name;
  std::vector<RawCallsite> callsites;
  std::vector<std::string> succ;
  std::string where;
};

template <typename T>
T get_field(const json &obj, const char *key, const std::string &where) {
  if (!obj.contains(key))
    throw IrError(where, std::string("missing field '") + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception &) {
    throw IrError(where + "." + key, "wrong type");
  }
}

RawCallsite parse_callsite(const json &j, const std::string &where) {
  if (!j.is_object())
    throw IrError(where, "callsite must be an object");
  RawCallsite cs;
  cs.where = where;
  if (j.contains("id")) {
    auto id = get_field<std::int64_t>(j, "id", where);
    if (id < 0)
      throw IrError(where + ".id", "callsite ids are non-negative");
    cs.id = static_cast<CallsiteId>(id);
  }
  cs.callees = get_field<std::vector<std::string>>(j, "callees", where);
  if (j.contains("kind")) {
    auto k = get_field<std::string>(j, "kind", where);
    if (k == "direct")
      cs.kind = CallKind::direct;
    else if (k == "indirect")
      cs.kind = CallKind::indirect;
    else
      throw IrError(where + ".kind", "expected 'direct' or 'indirect'");
  }
  return cs;
}

} // namespace

Program load_program(const json &root) {
  const json &doc = root.contains("program") ? root.at("program") : root;
  if (!doc.is_object())
    throw IrError("program", "expected an object");

  Program p;
  p.name = doc.contains("name") ? get_field<std::string>(doc, "name", "program") : "program";
  auto entry_name = get_field<std::string>(doc, "entry", "program");
  if (doc.contains("page_size")) {
    auto ps = get_field<std::int64_t>(doc, "page_size", "program");
    if (ps <= 0)
      throw IrError("page_size", "must be positive");
    p.page_size = static_cast<std::uint64_t>(ps);
  }
  if (!doc.contains("functions") || !doc.at("functions").is_array())
    throw IrError("functions", "missing function list");

  const json &fns = doc.at("functions");
  std::vector<std::vector<RawBlock>> raw_blocks(fns.size());
  std::vector<std::string> raw_entry(fns.size());
  std::vector<std::optional<std::vector<std::string>>> raw_exits(fns.size());

  for (std::size_t fi = 0; fi < fns.size(); ++fi) {
    const json &jf = fns[fi];
    std::string where = fn_loc(fi);
    if (!jf.is_object())
      throw IrError(where, "expected an object");
    Function fn;
    fn.name = get_field<std::string>(jf, "name", where);
    auto size = get_field<std::int64_t>(jf, "size_bytes", where);
    if (size <= 0)
      throw IrError(where + ".size_bytes", "must be positive");
    fn.size_bytes = static_cast<std::uint64_t>(size);
    if (jf.contains("gadget_count")) {
      auto g = get_field<std::int64_t>(jf, "gadget_count", where);
      if (g < 0)
        throw IrError(where + ".gadget_count", "must be non-negative");
      fn.gadget_count = static_cast<std::uint64_t>(g);
    } else {
      fn.gadget_count = fn.size_bytes / 10;
    }
    if (jf.contains("params"))
      fn.params = get_field<std::vector<std::string>>(jf, "params", where);
    if (jf.contains("param_values"))
      fn.param_values = get_field<std::vector<std::vector<std::int64_t>>>(jf, "param_values", where);

    if (!jf.contains("blocks") || !jf.at("blocks").is_array())
      throw IrError(where + ".blocks", "missing block list");
    const json &jbs = jf.at("blocks");
    for (std::size_t bi = 0; bi < jbs.size(); ++bi) {
      const json &jb = jbs[bi];
      std::string bwhere = where + ".blocks[" + std::to_string(bi) + "]";
      if (!jb.is_object())
        throw IrError(bwhere, "expected an object");
      RawBlock rb;
      rb.where = bwhere;
      rb.name = get_field<std::string>(jb, "id", bwhere);
      if (jb.contains("callsite") && !jb.at("callsite").is_null())
        rb.callsites.push_back(parse_callsite(jb.at("callsite"), bwhere + ".callsite"));
      if (jb.contains("callsites")) {
        const json &arr = jb.at("callsites");
        if (!arr.is_array())
          throw IrError(bwhere + ".callsites", "expected an array");
        for (std::size_t ci = 0; ci < arr.size(); ++ci)
          rb.callsites.push_back(
              parse_callsite(arr[ci], bwhere + ".callsites[" + std::to_string(ci) + "]"));
      }
      if (jb.contains("succ"))
        rb.succ = get_field<std::vector<std::string>>(jb, "succ", bwhere);
      raw_blocks[fi].push_back(std::move(rb));
    }
    if (raw_blocks[fi].empty())
      throw IrError(where + ".blocks", "function has no blocks");
    raw_entry[fi] = jf.contains("entry_block") ? get_field<std::string>(jf, "entry_block", where)
                                               : raw_blocks[fi].front().name;
    if (jf.contains("exit_blocks"))
      raw_exits[fi] = get_field<std::vector<std::string>>(jf, "exit_blocks", where);
    p.functions.push_back(std::move(fn));
  }

  std::unordered_map<std::string, FuncId> fn_index;
  for (FuncId f = 0; f < p.functions.size(); ++f)
    if (!fn_index.emplace(p.functions[f].name, f).second)
      throw IrError(fn_loc(f) + ".name", "duplicate function '" + p.functions[f].name + "'");
  auto entry_it = fn_index.find(entry_name);
  if (entry_it == fn_index.end())
    throw IrError("entry", "unknown entry function '" + entry_name + "'");
  p.entry = entry_it->second;

  // Callsite numbering: explicit ids are kept, the rest are assigned in
  // document order starting after the largest explicit id.
  CallsiteId next_id = 1;
  for (const auto &blocks : raw_blocks)
    for (const auto &rb : blocks)
      for (const auto &cs : rb.callsites)
        if (cs.id)
          next_id = std::max(next_id, *cs.id + 1);

  for (FuncId fi = 0; fi < p.functions.size(); ++fi) {
    auto &fn = p.functions[fi];
    auto &rbs = raw_blocks[fi];
    // Names of normalized pieces; each raw block maps to [first, last].
    std::unordered_map<std::string, std::pair<BlockId, BlockId>> span;
    std::vector<std::string> piece_names;
    for (const auto &rb : rbs) {
      std::size_t pieces = std::max<std::size_t>(1, rb.callsites.size());
      BlockId first = static_cast<BlockId>(piece_names.size());
      for (std::size_t k = 0; k < pieces; ++k)
        piece_names.push_back(k == 0 ? rb.name : rb.name + "#" + std::to_string(k));
      if (!span.emplace(rb.name, std::make_pair(first, first + pieces - 1)).second)
        throw IrError(rb.where + ".id", "duplicate block '" + rb.name + "'");
    }
    std::set<std::string> all_names(piece_names.begin(), piece_names.end());
    if (all_names.size() != piece_names.size())
      throw IrError(fn_loc(fi) + ".blocks", "block name collides with a split-block name");

    auto resolve_first = [&](const std::string &n, const std::string &where) {
      auto it = span.find(n);
      if (it == span.end())
        throw IrError(where, "unknown block '" + n + "'");
      return it->second.first;
    };

    fn.blocks.resize(piece_names.size());
    for (const auto &rb : rbs) {
      auto [first, last] = span.at(rb.name);
      for (BlockId b = first; b <= last; ++b) {
        auto &blk = fn.blocks[b];
        blk.name = piece_names[b];
        if (!rb.callsites.empty()) {
          const auto &rc = rb.callsites[b - first];
          Callsite cs;
          cs.id = rc.id ? *rc.id : next_id++;
          for (std::size_t k = 0; k < rc.callees.size(); ++k) {
            auto it = fn_index.find(rc.callees[k]);
            if (it == fn_index.end())
              throw IrError(rc.where + ".callees[" + std::to_string(k) + "]",
                            "unknown function '" + rc.callees[k] + "'");
            cs.callees.push_back(it->second);
          }
          if (cs.callees.empty())
            throw IrError(rc.where + ".callees", "callsite has no callees");
          std::sort(cs.callees.begin(), cs.callees.end());
          cs.callees.erase(std::unique(cs.callees.begin(), cs.callees.end()), cs.callees.end());
          cs.kind = rc.kind ? *rc.kind
                            : (cs.callees.size() > 1 ? CallKind::indirect : CallKind::direct);
          if (cs.kind == CallKind::direct && cs.callees.size() > 1)
            throw IrError(rc.where + ".kind", "direct callsite with several callees");
          blk.callsite = std::move(cs);
        }
        if (b < last) {
          blk.successors = {b + 1};
        } else {
          for (std::size_t k = 0; k < rb.succ.size(); ++k)
            blk.successors.push_back(
                resolve_first(rb.succ[k], rb.where + ".succ[" + std::to_string(k) + "]"));
        }
      }
    }
    fn.entry_block = resolve_first(raw_entry[fi], fn_loc(fi) + ".entry_block");
    if (raw_exits[fi]) {
      for (std::size_t k = 0; k < raw_exits[fi]->size(); ++k) {
        const auto &n = (*raw_exits[fi])[k];
        auto it = span.find(n);
        if (it == span.end())
          throw IrError(fn_loc(fi) + ".exit_blocks[" + std::to_string(k) + "]",
                        "unknown block '" + n + "'");
        fn.exit_blocks.push_back(it->second.second);
      }
    } else {
      for (BlockId b = 0; b < fn.blocks.size(); ++b)
        if (fn.blocks[b].successors.empty())
          fn.exit_blocks.push_back(b);
    }
  }

  p.finalize();
  return p;
}

Program parse_program(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error &e) {
    throw IrError("", std::string("not a valid IR document: ") + e.what());
  }
  return load_program(doc);
}

std::filesystem::path resolve_program_path(const std::filesystem::path &path) {
  if (std::filesystem::is_regular_file(path))
    return path;
  auto with_ext = path;
  with_ext += ".json";
  if (std::filesystem::is_regular_file(with_ext))
    return with_ext;
  return path;
}

Program load_program_file(const std::filesystem::path &path) {
  auto resolved = resolve_program_path(path);
  std::ifstream in(resolved);
  if (!in)
    throw IrError("", "cannot open program file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_program(buf.str());
}

ordered_json program_to_json(const Program &p) {
  ordered_json fns = ordered_json::array();
  for (const auto &fn : p.functions) {
    ordered_json jf;
    jf["name"] = fn.name;
    jf["size_bytes"] = fn.size_bytes;
    jf["gadget_count"] = fn.gadget_count;
    jf["params"] = fn.params;
    if (!fn.param_values.empty())
      jf["param_values"] = fn.param_values;
    jf["entry_block"] = fn.blocks[fn.entry_block].name;
    ordered_json exits = ordered_json::array();
    for (BlockId e : fn.exit_blocks)
      exits.push_back(fn.blocks[e].name);
    jf["exit_blocks"] = exits;
    ordered_json blocks = ordered_json::array();
    for (const auto &b : fn.blocks) {
      ordered_json jb;
      jb["id"] = b.name;
      if (b.callsite) {
        ordered_json cs;
        cs["id"] = b.callsite->id;
        ordered_json callees = ordered_json::array();
        for (FuncId c : b.callsite->callees)
          callees.push_back(p.functions[c].name);
        cs["callees"] = callees;
        cs["kind"] = b.callsite->kind == CallKind::direct ? "direct" : "indirect";
        jb["callsite"] = cs;
      }
      ordered_json succ = ordered_json::array();
      for (BlockId s : b.successors)
        succ.push_back(fn.blocks[s].name);
      jb["succ"] = succ;
      blocks.push_back(jb);
    }
    jf["blocks"] = blocks;
    fns.push_back(jf);
  }
  ordered_json prog;
  prog["name"] = p.name;
  prog["entry"] = p.functions[p.entry].name;
  prog["page_size"] = p.page_size;
  prog["functions"] = fns;
  ordered_json doc;
  doc["program"] = prog;
  return doc;
}

std::string serialize_program(const Program &p) { return program_to_json(p).dump(2) + "\n"; }

} // namespace pdsg

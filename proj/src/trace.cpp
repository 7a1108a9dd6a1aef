#include "pdsg/trace.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace pdsg {

TraceFormatError::TraceFormatError(std::size_t line, const std::string &message)
    : std::runtime_error("trace line " + std::to_string(line) + ": " + message), line_(line) {}

std::vector<CallsiteId> Trace::call_sequence() const {
  std::vector<CallsiteId> out;
  for (const auto &e : events)
    if (const auto *c = std::get_if<Call>(&e))
      out.push_back(c->callsite);
  return out;
}

std::string format_trace(const Program &p, const Trace &t) {
  std::ostringstream out;
  if (t.attack_index)
    out << "# attack " << *t.attack_index << "\n";
  for (const auto &e : t.events) {
    if (const auto *en = std::get_if<EnterScg>(&e)) {
      out << "E " << en->scg << ' ';
      if (en->features.empty())
        out << '-';
      for (std::size_t i = 0; i < en->features.size(); ++i)
        out << (i ? "," : "") << en->features[i];
      out << '\n';
    } else if (const auto *x = std::get_if<ExitScg>(&e)) {
      out << "X " << x->scg << '\n';
    } else if (const auto *c = std::get_if<Call>(&e)) {
      out << "C " << c->callsite << ' ' << p.function_name(c->callee) << '\n';
    } else {
      out << "R " << p.function_name(std::get<Return>(e).function) << '\n';
    }
  }
  return out.str();
}

namespace {

template <typename T> T parse_int(std::string_view s, std::size_t line) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw TraceFormatError(line, "bad integer '" + std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r'))
      ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r')
      ++j;
    if (j > i)
      out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

} // namespace

Trace parse_trace(const Program &p, std::string_view text) {
  Trace t;
  std::size_t line_no = 0;
  auto func = [&](std::string_view name) {
    auto f = p.find_function(name);
    if (!f)
      throw TraceFormatError(line_no, "unknown function '" + std::string(name) + "'");
    return *f;
  };
  while (!text.empty()) {
    auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    auto tok = split_ws(line);
    if (tok.empty())
      continue;
    if (tok[0].front() == '#') {
      if (tok.size() == 3 && tok[0] == "#" && tok[1] == "attack")
        t.attack_index = parse_int<std::size_t>(tok[2], line_no);
      continue;
    }
    if (tok[0] == "E") {
      if (tok.size() != 3)
        throw TraceFormatError(line_no, "expected 'E <scg> <features>'");
      EnterScg e{parse_int<ScgId>(tok[1], line_no), {}};
      if (tok[2] != "-") {
        std::string_view fs = tok[2];
        while (true) {
          auto comma = fs.find(',');
          e.features.push_back(parse_int<std::int64_t>(fs.substr(0, comma), line_no));
          if (comma == std::string_view::npos)
            break;
          fs = fs.substr(comma + 1);
        }
      }
      t.events.emplace_back(std::move(e));
    } else if (tok[0] == "X") {
      if (tok.size() != 2)
        throw TraceFormatError(line_no, "expected 'X <scg>'");
      t.events.emplace_back(ExitScg{parse_int<ScgId>(tok[1], line_no)});
    } else if (tok[0] == "C") {
      if (tok.size() != 3)
        throw TraceFormatError(line_no, "expected 'C <callsite> <callee>'");
      t.events.emplace_back(Call{parse_int<CallsiteId>(tok[1], line_no), func(tok[2])});
    } else if (tok[0] == "R") {
      if (tok.size() != 2)
        throw TraceFormatError(line_no, "expected 'R <function>'");
      t.events.emplace_back(Return{func(tok[1])});
    } else {
      throw TraceFormatError(line_no, "unknown event '" + std::string(tok[0]) + "'");
    }
  }
  return t;
}

void write_trace_file(const Program &p, const Trace &t, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << format_trace(p, t);
}

Trace read_trace_file(const Program &p, const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_trace(p, buf.str());
}

std::vector<Trace> read_trace_dir(const Program &p, const std::filesystem::path &dir) {
  std::vector<std::filesystem::path> files;
  for (const auto &entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".trace")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<Trace> out;
  for (const auto &f : files)
    out.push_back(read_trace_file(p, f));
  return out;
}

void write_trace_dir(const Program &p, const std::vector<Trace> &traces,
                     const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < traces.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.trace", i);
    write_trace_file(p, traces[i], dir / name);
  }
}

std::optional<std::string> validate_trace(const Program &p, const Trace &t) {
  std::vector<FuncId> frames;
  std::vector<ScgId> scopes;
  for (std::size_t i = 0; i < t.events.size(); ++i) {
    const auto &e = t.events[i];
    auto at = [&](const std::string &msg) { return "event " + std::to_string(i) + ": " + msg; };
    if (const auto *en = std::get_if<EnterScg>(&e)) {
      scopes.push_back(en->scg);
    } else if (const auto *x = std::get_if<ExitScg>(&e)) {
      if (scopes.empty() || scopes.back() != x->scg)
        return at("exit of scope " + std::to_string(x->scg) + " that is not innermost");
      scopes.pop_back();
    } else if (const auto *c = std::get_if<Call>(&e)) {
      const Callsite *cs = p.callsite(c->callsite);
      if (!cs)
        return at("unknown callsite " + std::to_string(c->callsite));
      if (!std::binary_search(cs->callees.begin(), cs->callees.end(), c->callee))
        return at("callee is not a target of callsite " + std::to_string(c->callsite));
      if (c->callsite == kRootCallsite) {
        if (!frames.empty())
          return at("root callsite used inside a running program");
      } else {
        auto loc = p.location_of(c->callsite);
        if (frames.empty() || loc->function != frames.back())
          return at("callsite " + std::to_string(c->callsite) + " not in the running function");
      }
      frames.push_back(c->callee);
    } else {
      const auto &r = std::get<Return>(e);
      if (frames.empty() || frames.back() != r.function)
        return at("return from a function that is not on top of the stack");
      frames.pop_back();
    }
  }
  if (!frames.empty())
    return std::string("trace ends with functions still on the stack");
  if (!scopes.empty())
    return std::string("trace ends inside an open scope");
  return std::nullopt;
}

} // namespace pdsg

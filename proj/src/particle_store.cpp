#include "cweave/particle_store.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unistd.h>

#include <zlib.h>

namespace cweave {

namespace {

constexpr std::array<std::string_view, 5> kOpNames = {"put", "delete", "tombstone_ia_stale", "put_strand",
                                                      "delete_strand"};

std::uint32_t crc32_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

void put_u16(std::string& out, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(std::string_view bytes, std::size_t offset) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<T>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

StoreLogRecord decode_record_body(std::string_view body) {
  Json j;
  try {
    j = Json::parse(body);
    StoreLogRecord r;
    r.seq = j.at("seq").get<std::uint64_t>();
    auto op = parse_log_op(j.at("op").get<std::string>());
    if (!op) throw Error(ErrorCode::validation, "unknown log op");
    r.op = *op;
    r.payload = j.at("payload");
    return r;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::validation, std::string("malformed log record: ") + e.what());
  }
}

// Reader over length-prefixed blobs; throws checksum_mismatch on overrun so a
// corrupted length field is reported the same way as a corrupted byte.
class Cursor {
 public:
  explicit Cursor(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T take() {
    need(sizeof(T));
    T v = get_le<T>(bytes_, pos_);
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take_bytes(std::size_t n) {
    need(n);
    auto v = bytes_.substr(pos_, n);
    pos_ += n;
    return v;
  }

  [[nodiscard]] std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::checksum_mismatch, "snapshot truncated or corrupt");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string_view to_string(LogOp op) noexcept { return kOpNames[static_cast<std::size_t>(op)]; }

std::optional<LogOp> parse_log_op(std::string_view text) noexcept {
  for (std::size_t i = 0; i < kOpNames.size(); ++i)
    if (kOpNames[i] == text) return static_cast<LogOp>(i);
  return std::nullopt;
}

std::string encode_frame(const StoreLogRecord& record) {
  const std::string body = Json{{"seq", record.seq}, {"op", to_string(record.op)}, {"payload", record.payload}}.dump();
  std::string frame;
  frame.reserve(body.size() + 8);
  put_u32(frame, static_cast<std::uint32_t>(body.size()));
  frame += body;
  put_u32(frame, crc32_of(body));
  return frame;
}

LogReadResult read_log(const std::filesystem::path& path) {
  LogReadResult result;
  if (!std::filesystem::exists(path)) return result;
  const std::string bytes = read_file(path);
  std::string_view view(bytes);
  std::size_t pos = 0;
  std::uint64_t last_seq = 0;
  while (pos < view.size()) {
    if (view.size() - pos < 4) {
      result.truncated_tail = true;
      break;
    }
    const auto len = get_le<std::uint32_t>(view, pos);
    if (view.size() - pos - 4 < static_cast<std::size_t>(len) + 4) {
      result.truncated_tail = true;
      break;
    }
    const auto body = view.substr(pos + 4, len);
    const auto crc = get_le<std::uint32_t>(view, pos + 4 + len);
    const bool last = pos + 8 + len == view.size();
    if (crc != crc32_of(body)) {
      if (last) {
        result.truncated_tail = true;
        break;
      }
      throw Error(ErrorCode::checksum_mismatch, "log frame at offset " + std::to_string(pos) + " fails CRC");
    }
    auto record = decode_record_body(body);
    if (!result.records.empty() && record.seq <= last_seq)
      throw Error(ErrorCode::validation, "log seq does not increase at offset " + std::to_string(pos));
    last_seq = record.seq;
    result.records.push_back(std::move(record));
    pos += 8 + len;
  }
  return result;
}

bool ScanPredicate::matches(const InsightParticle& p) const {
  if (kind && p.kind != *kind) return false;
  if (signifier && !p.signifiers.count(*signifier)) return false;
  if (user_tag && p.imprint.user_tag != *user_tag) return false;
  return true;
}

// --- lifecycle ----------------------------------------------------------------

ParticleStore::ParticleStore(ParticleStore&& other) noexcept { *this = std::move(other); }

ParticleStore& ParticleStore::operator=(ParticleStore&& other) noexcept {
  if (this != &other) {
    close_log();
    particles_ = std::move(other.particles_);
    strands_ = std::move(other.strands_);
    incident_ = std::move(other.incident_);
    seq_ = other.seq_;
    log_path_ = std::move(other.log_path_);
    log_ = std::exchange(other.log_, nullptr);
    fsync_ = other.fsync_;
  }
  return *this;
}

ParticleStore::~ParticleStore() { close_log(); }

void ParticleStore::close_log() {
  if (log_) {
    std::fclose(log_);
    log_ = nullptr;
  }
}

void ParticleStore::open_log_for_append() {
  close_log();
  if (!log_path_) return;
  if (log_path_->has_parent_path()) std::filesystem::create_directories(log_path_->parent_path());
  log_ = std::fopen(log_path_->c_str(), "ab");
  if (!log_) throw Error(ErrorCode::io, "cannot open log " + log_path_->string() + ": " + std::strerror(errno));
}

ParticleStore ParticleStore::open(const StoreOptions& options) {
  ParticleStore store;
  store.fsync_ = options.fsync;
  if (options.snapshot_path && std::filesystem::exists(*options.snapshot_path)) store.restore(*options.snapshot_path);
  if (options.log_path) {
    auto log = read_log(*options.log_path);
    for (const auto& record : log.records)
      if (record.seq > store.seq_) store.apply(record);
    if (log.truncated_tail) {
      // Rewrite the log without the torn frame so appends stay parseable.
      std::string rewritten;
      for (const auto& record : log.records) rewritten += encode_frame(record);
      std::ofstream out(*options.log_path, std::ios::binary | std::ios::trunc);
      out.write(rewritten.data(), static_cast<std::streamsize>(rewritten.size()));
    }
    store.log_path_ = options.log_path;
    store.open_log_for_append();
  }
  return store;
}

// --- mutation -------------------------------------------------------------------

void ParticleStore::commit(LogOp op, Json payload) {
  StoreLogRecord record{seq_ + 1, op, std::move(payload)};
  if (log_) {
    const std::string frame = encode_frame(record);
    if (std::fwrite(frame.data(), 1, frame.size(), log_) != frame.size() || std::fflush(log_) != 0)
      throw Error(ErrorCode::io, "log append failed");
    if (fsync_ && ::fsync(::fileno(log_)) != 0) throw Error(ErrorCode::io, "log fsync failed");
  }
  apply(record);
}

void ParticleStore::index_strand(const RelationalStrand& s) {
  incident_[s.src].push_back(s.id);
  incident_[s.dst].push_back(s.id);
}

void ParticleStore::unindex_strand(const RelationalStrand& s) {
  for (const auto& end : {s.src, s.dst}) {
    auto it = incident_.find(end);
    if (it == incident_.end()) continue;
    auto& ids = it->second;
    ids.erase(std::remove(ids.begin(), ids.end(), s.id), ids.end());
    if (ids.empty()) incident_.erase(it);
  }
}

void ParticleStore::apply(const StoreLogRecord& record) {
  switch (record.op) {
    case LogOp::put: {
      auto p = record.payload.get<InsightParticle>();
      particles_.insert_or_assign(p.id, std::move(p));
      break;
    }
    case LogOp::remove: {
      const auto id = record.payload.get<ParticleId>();
      particles_.erase(id);
      if (auto it = incident_.find(id); it != incident_.end()) {
        const auto strand_ids = it->second;
        for (const auto& sid : strand_ids) {
          auto s = strands_.find(sid);
          if (s == strands_.end()) continue;
          unindex_strand(s->second);
          strands_.erase(s);
        }
        incident_.erase(id);
      }
      break;
    }
    case LogOp::tombstone_ia_stale: {
      const auto id = record.payload.get<ParticleId>();
      if (auto it = particles_.find(id); it != particles_.end())
        it->second.imprint.agent_state[std::string(kStaleProvenanceKey)] = "true";
      break;
    }
    case LogOp::put_strand: {
      auto s = record.payload.get<RelationalStrand>();
      if (auto old = strands_.find(s.id); old != strands_.end()) unindex_strand(old->second);
      index_strand(s);
      strands_.insert_or_assign(s.id, std::move(s));
      break;
    }
    case LogOp::remove_strand: {
      const auto id = record.payload.get<StrandId>();
      if (auto it = strands_.find(id); it != strands_.end()) {
        unindex_strand(it->second);
        strands_.erase(it);
      }
      break;
    }
  }
  seq_ = record.seq;
}

ParticleId ParticleStore::put(const InsightParticle& p) {
  if (auto violations = validate_particle(p); !violations.empty()) {
    std::string msg = "particle " + p.id.str() + " invalid:";
    for (const auto& v : violations) msg += " [" + v.rule + ": " + v.detail + "]";
    throw Error(ErrorCode::validation, msg);
  }
  if (auto it = particles_.find(p.id); it != particles_.end() && it->second == p) return p.id;
  commit(LogOp::put, Json(p));
  return p.id;
}

const InsightParticle* ParticleStore::find(const ParticleId& id) const {
  auto it = particles_.find(id);
  return it == particles_.end() ? nullptr : &it->second;
}

const InsightParticle& ParticleStore::get(const ParticleId& id) const {
  if (const auto* p = find(id)) return *p;
  throw Error(ErrorCode::not_found, "particle " + id.str() + " not found");
}

DeletionReport ParticleStore::remove(const ParticleId& id, Cascade cascade) {
  if (!contains(id)) throw Error(ErrorCode::not_found, "particle " + id.str() + " not found");
  DeletionReport report;
  report.deleted = id;
  std::vector<ParticleId> dependents;
  if (auto it = incident_.find(id); it != incident_.end()) {
    report.removed_strands = it->second;
    std::sort(report.removed_strands.begin(), report.removed_strands.end());
    for (const auto& sid : report.removed_strands) {
      const auto& s = strands_.at(sid);
      if (s.type == StrandType::derivedFrom && s.src == id) {
        const auto* target = find(s.dst);
        if (target && target->is_aggregate()) dependents.push_back(s.dst);
      }
    }
  }
  report.strands_removed = report.removed_strands.size();
  commit(LogOp::remove, Json(id));

  if (cascade == Cascade::strands_and_flag_ias) {
    std::sort(dependents.begin(), dependents.end());
    dependents.erase(std::unique(dependents.begin(), dependents.end()), dependents.end());
    for (const auto& ia : dependents) {
      if (!get(ia).is_stale()) commit(LogOp::tombstone_ia_stale, Json(ia));
      report.ias_marked_stale.push_back(ia);
    }
  }
  return report;
}

std::vector<InsightParticle> ParticleStore::scan(const ScanPredicate& predicate) const {
  std::vector<InsightParticle> out;
  for (const auto& [id, p] : particles_)
    if (predicate.matches(p)) out.push_back(p);
  return out;
}

void ParticleStore::put_strand(const RelationalStrand& s) {
  if (!contains(s.src) || !contains(s.dst))
    throw Error(ErrorCode::not_found, "strand " + s.id.str() + " references a missing particle");
  if (auto it = strands_.find(s.id); it != strands_.end() && it->second == s) return;
  commit(LogOp::put_strand, Json(s));
}

void ParticleStore::remove_strand(const StrandId& id) {
  if (!strands_.count(id)) throw Error(ErrorCode::not_found, "strand " + id.str() + " not found");
  commit(LogOp::remove_strand, Json(id));
}

const RelationalStrand* ParticleStore::find_strand(const StrandId& id) const {
  auto it = strands_.find(id);
  return it == strands_.end() ? nullptr : &it->second;
}

// --- snapshots --------------------------------------------------------------------

void ParticleStore::snapshot(const std::filesystem::path& path) const {
  std::string out(kSnapshotMagic);
  put_u16(out, kSnapshotVersion);
  put_u64(out, particles_.size());
  for (const auto& [id, p] : particles_) {
    const auto encoded = encode_particle(p);
    put_u32(out, static_cast<std::uint32_t>(encoded.size()));
    out += encoded;
  }
  put_u64(out, strands_.size());
  for (const auto& [id, s] : strands_) {
    const auto encoded = encode_strand(s);
    put_u32(out, static_cast<std::uint32_t>(encoded.size()));
    out += encoded;
  }
  put_u64(out, seq_);
  put_u32(out, crc32_of(out));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream file(tmp, std::ios::binary | std::ios::trunc);
    if (!file) throw Error(ErrorCode::io, "cannot write snapshot " + tmp);
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw Error(ErrorCode::io, "snapshot write failed");
  }
  std::filesystem::rename(tmp, path);
}

void ParticleStore::restore(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  std::string_view view(bytes);
  if (view.size() < kSnapshotMagic.size() + 2 + 8 + 8 + 8 + 4)
    throw Error(ErrorCode::checksum_mismatch, "snapshot too short");
  const auto body = view.substr(0, view.size() - 4);
  if (get_le<std::uint32_t>(view, view.size() - 4) != crc32_of(body))
    throw Error(ErrorCode::checksum_mismatch, "snapshot checksum mismatch");
  if (body.substr(0, kSnapshotMagic.size()) != kSnapshotMagic)
    throw Error(ErrorCode::validation, "not a snapshot file");

  Cursor cur(body);
  cur.take_bytes(kSnapshotMagic.size());
  if (const auto version = cur.take<std::uint16_t>(); version != kSnapshotVersion)
    throw Error(ErrorCode::validation, "unsupported snapshot version " + std::to_string(version));

  ParticleStore fresh;
  const auto n_particles = cur.take<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_particles; ++i) {
    auto p = decode_particle(cur.take_bytes(cur.take<std::uint32_t>()));
    fresh.particles_.insert_or_assign(p.id, std::move(p));
  }
  const auto n_strands = cur.take<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_strands; ++i) {
    auto s = decode_strand(cur.take_bytes(cur.take<std::uint32_t>()));
    fresh.index_strand(s);
    fresh.strands_.insert_or_assign(s.id, std::move(s));
  }
  fresh.seq_ = cur.take<std::uint64_t>();

  particles_ = std::move(fresh.particles_);
  strands_ = std::move(fresh.strands_);
  incident_ = std::move(fresh.incident_);
  seq_ = fresh.seq_;
}

void ParticleStore::compact(const std::filesystem::path& snapshot_path) {
  snapshot(snapshot_path);
  if (log_path_) {
    close_log();
    std::ofstream(*log_path_, std::ios::binary | std::ios::trunc);
    open_log_for_append();
  }
}

bool ParticleStore::state_equals(const ParticleStore& other) const {
  return seq_ == other.seq_ && particles_ == other.particles_ && strands_ == other.strands_;
}

}  // namespace cweave

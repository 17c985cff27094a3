#include "dfflops/io.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dfflops/hash.hpp"

namespace dfflops::io {

namespace {

using nlohmann::json;

constexpr char kCheckpointMagic[8] = {'D', 'F', 'F', 'L', 'O', 'P', 'S', 'C'};
constexpr char kIndexMagic[8] = {'D', 'F', 'F', 'L', 'O', 'P', 'S', 'I'};
constexpr std::uint32_t kFormatVersion = 1;

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(path, mode);
    if (!in) {
        throw FormatError("cannot open '" + path.string() + "' for reading");
    }
    return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, mode | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot open '" + path.string() + "' for writing");
    }
    return out;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream ss(line);
    return {std::istream_iterator<std::string>(ss), std::istream_iterator<std::string>()};
}

std::string where(const fs::path& path, std::size_t line) {
    return path.string() + ":" + std::to_string(line) + ": ";
}

// Little-endian byte sink/source.
class Writer {
public:
    template <typename T>
    void put(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, &v, sizeof(T));
        buf_.append(reinterpret_cast<const char*>(bytes), sizeof(T));
    }
    void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    void varint(std::uint64_t v) {
        while (v >= 0x80) {
            buf_.push_back(static_cast<char>((v & 0x7F) | 0x80));
            v >>= 7;
        }
        buf_.push_back(static_cast<char>(v));
    }
    [[nodiscard]] std::size_t size() const noexcept { return buf_.size(); }
    std::string& bytes() noexcept { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    Reader(std::string data, std::string name) : data_(std::move(data)), name_(std::move(name)) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    void raw(void* p, std::size_t n) {
        need(n);
        std::memcpy(p, data_.data() + pos_, n);
        pos_ += n;
    }
    std::uint64_t varint() {
        std::uint64_t v = 0;
        for (int shift = 0; shift < 64; shift += 7) {
            const auto byte = get<std::uint8_t>();
            v |= static_cast<std::uint64_t>(byte & 0x7F) << shift;
            if ((byte & 0x80) == 0) {
                return v;
            }
        }
        throw FormatError(name_ + ": malformed varint");
    }
    [[nodiscard]] std::size_t pos() const noexcept { return pos_; }
    void seek(std::size_t p) {
        if (p > data_.size()) {
            throw FormatError(name_ + ": offset beyond end of file");
        }
        pos_ = p;
    }
    [[nodiscard]] bool at_end() const noexcept { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size()) {
            throw FormatError(name_ + ": truncated file");
        }
    }
    std::string data_;
    std::string name_;
    std::size_t pos_ = 0;
};

void write_bytes(const fs::path& path, const std::string& bytes) {
    auto out = open_out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw FormatError("write failed for '" + path.string() + "'");
    }
}

void check_magic(Reader& r, const char (&magic)[8], const fs::path& path, const char* what) {
    char got[8];
    r.raw(got, 8);
    if (std::memcmp(got, magic, 8) != 0) {
        throw FormatError(path.string() + ": not a " + what + " file (bad magic)");
    }
    const auto version = r.get<std::uint32_t>();
    if (version != kFormatVersion) {
        throw FormatError(path.string() + ": unsupported " + what + " version " +
                          std::to_string(version));
    }
}

} // namespace

std::string read_file(const fs::path& path) {
    auto in = open_in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string file_digest(const fs::path& path) {
    return hex64(fnv1a(read_file(path)));
}

std::vector<Document> read_corpus(const fs::path& path) {
    auto in = open_in(path);
    std::vector<Document> docs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) {
            continue;
        }
        try {
            const auto j = json::parse(line);
            docs.push_back({j.at("id").get<std::string>(), j.at("text").get<std::string>()});
        } catch (const json::exception& e) {
            throw FormatError(where(path, lineno) + e.what());
        }
    }
    return docs;
}

void write_corpus(const fs::path& path, const std::vector<Document>& docs) {
    auto out = open_out(path);
    for (const auto& d : docs) {
        json j;
        j["id"] = d.id;
        j["text"] = d.text;
        out << j.dump() << '\n';
    }
}

Vocabulary read_vocab(const fs::path& path) {
    auto in = open_in(path);
    std::vector<std::string> terms;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        terms.push_back(line);
    }
    if (terms.empty()) {
        throw FormatError(path.string() + ": empty vocabulary");
    }
    return Vocabulary(std::move(terms));
}

void write_vocab(const fs::path& path, const Vocabulary& vocab) {
    auto out = open_out(path, std::ios::binary);
    for (const auto& t : vocab.terms()) {
        out << t << '\n';
    }
}

std::vector<QueryRecord> read_queries(const fs::path& path) {
    auto in = open_in(path);
    std::vector<QueryRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (trim(line).empty()) {
            continue;
        }
        std::vector<std::string> cols;
        std::size_t start = 0;
        for (;;) {
            const auto tab = line.find('\t', start);
            cols.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) {
                break;
            }
            start = tab + 1;
        }
        if (cols.size() < 2 || cols.size() > 3) {
            throw FormatError(where(path, lineno) + "expected 2 or 3 tab-separated columns");
        }
        out.push_back({cols[0], cols[1], cols.size() == 3 ? cols[2] : std::string{}});
    }
    return out;
}

void write_queries(const fs::path& path, const std::vector<QueryRecord>& queries) {
    auto out = open_out(path, std::ios::binary);
    for (const auto& q : queries) {
        out << q.id << '\t' << q.text;
        if (!q.positive_doc.empty()) {
            out << '\t' << q.positive_doc;
        }
        out << '\n';
    }
}

Qrels read_qrels(const fs::path& path) {
    auto in = open_in(path);
    Qrels qrels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto cols = split_ws(line);
        if (cols.empty()) {
            continue;
        }
        if (cols.size() != 4) {
            throw FormatError(where(path, lineno) + "expected `query_id 0 doc_id grade`");
        }
        int grade = 0;
        const auto& g = cols[3];
        auto [ptr, ec] = std::from_chars(g.data(), g.data() + g.size(), grade);
        if (ec != std::errc{} || ptr != g.data() + g.size() || grade < 0) {
            throw FormatError(where(path, lineno) + "grade must be a non-negative integer");
        }
        qrels[cols[0]][cols[2]] = grade;
    }
    return qrels;
}

void write_qrels(const fs::path& path, const Qrels& qrels) {
    auto out = open_out(path, std::ios::binary);
    for (const auto& [qid, judged] : qrels) {
        for (const auto& [doc, grade] : judged) {
            out << qid << " 0 " << doc << ' ' << grade << '\n';
        }
    }
}

void write_run(std::ostream& out, const std::vector<RunLine>& lines, const std::string& tag) {
    char score[64];
    for (const auto& l : lines) {
        std::snprintf(score, sizeof score, "%.9g", l.score);
        out << l.query_id << " Q0 " << l.doc_id << ' ' << l.rank << ' ' << score << ' ' << tag
            << '\n';
    }
}

Run read_run(const fs::path& path) {
    auto in = open_in(path);
    std::map<std::string, std::vector<std::pair<std::size_t, std::string>>> by_query;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto cols = split_ws(line);
        if (cols.empty()) {
            continue;
        }
        if (cols.size() != 6) {
            throw FormatError(where(path, lineno) + "expected `query_id Q0 doc_id rank score tag`");
        }
        std::size_t rank = 0;
        auto [ptr, ec] = std::from_chars(cols[3].data(), cols[3].data() + cols[3].size(), rank);
        if (ec != std::errc{}) {
            throw FormatError(where(path, lineno) + "rank must be an integer");
        }
        by_query[cols[0]].emplace_back(rank, cols[2]);
    }
    Run run;
    for (auto& [qid, docs] : by_query) {
        std::stable_sort(docs.begin(), docs.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        auto& out = run[qid];
        for (auto& [rank, doc] : docs) {
            out.push_back(std::move(doc));
        }
    }
    return run;
}

void write_vectors(const fs::path& path, const std::vector<SparseVector>& vectors,
                   const Vocabulary& vocab) {
    auto out = open_out(path, std::ios::binary);
    for (const auto& v : vectors) {
        nlohmann::ordered_json j;
        j["id"] = v.doc_id();
        auto& vec = j["vector"] = nlohmann::ordered_json::object();
        for (const auto& e : v.entries()) {
            vec[vocab.term(e.term)] = e.weight;
        }
        out << j.dump() << '\n';
    }
}

std::vector<SparseVector> read_vectors(const fs::path& path, const Vocabulary& vocab) {
    auto in = open_in(path);
    std::vector<SparseVector> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) {
            continue;
        }
        try {
            const auto j = json::parse(line);
            std::vector<Entry> entries;
            for (const auto& [term, w] : j.at("vector").items()) {
                const auto id = vocab.lookup(term);
                if (id < 0) {
                    throw FormatError(where(path, lineno) + "term '" + term +
                                      "' is not in the vocabulary");
                }
                entries.push_back({static_cast<TermId>(id), w.get<double>()});
            }
            out.push_back(SparseVector::from_unsorted(j.at("id").get<std::string>(),
                                                      std::move(entries)));
        } catch (const json::exception& e) {
            throw FormatError(where(path, lineno) + e.what());
        }
    }
    return out;
}

void write_checkpoint(const fs::path& path, const EncoderParams& params, std::uint64_t vocab_hash) {
    params.validate();
    Writer w;
    w.raw(kCheckpointMagic, 8);
    w.put<std::uint32_t>(kFormatVersion);
    w.put<std::uint64_t>(vocab_hash);
    const auto v = static_cast<std::uint32_t>(params.vocab_size());
    const auto k = static_cast<std::uint32_t>(params.rank());
    w.put(v);
    w.put(k);
    for (const auto* m : {&params.U, &params.Vp}) {
        for (Eigen::Index i = 0; i < m->rows(); ++i) {
            for (Eigen::Index j = 0; j < m->cols(); ++j) {
                w.put(static_cast<float>((*m)(i, j)));
            }
        }
    }
    for (Eigen::Index i = 0; i < params.b.size(); ++i) {
        w.put(static_cast<float>(params.b[i]));
    }
    write_bytes(path, w.bytes());
}

Checkpoint read_checkpoint(const fs::path& path) {
    Reader r(read_file(path), path.string());
    check_magic(r, kCheckpointMagic, path, "checkpoint");
    Checkpoint ck;
    ck.vocab_hash = r.get<std::uint64_t>();
    const auto v = r.get<std::uint32_t>();
    const auto k = r.get<std::uint32_t>();
    if (k == 0) {
        throw FormatError(path.string() + ": checkpoint rank is zero");
    }
    ck.params = EncoderParams::zeros(v, k);
    for (auto* m : {&ck.params.U, &ck.params.Vp}) {
        for (Eigen::Index i = 0; i < m->rows(); ++i) {
            for (Eigen::Index j = 0; j < m->cols(); ++j) {
                (*m)(i, j) = r.get<float>();
            }
        }
    }
    for (Eigen::Index i = 0; i < ck.params.b.size(); ++i) {
        ck.params.b[i] = r.get<float>();
    }
    if (!r.at_end()) {
        throw FormatError(path.string() + ": trailing bytes after checkpoint payload");
    }
    return ck;
}

void write_index(const fs::path& path, const InvertedIndex& index) {
    Writer postings;
    std::vector<std::uint64_t> offsets;
    offsets.reserve(index.vocab_size() + 1);
    for (const auto& pl : index.lists()) {
        offsets.push_back(postings.size());
        DocNum prev = 0;
        bool first = true;
        for (const auto& p : pl.postings) {
            postings.varint(first ? p.doc : p.doc - prev);
            postings.put(p.weight);
            prev = p.doc;
            first = false;
        }
    }
    offsets.push_back(postings.size());

    Writer w;
    w.raw(kIndexMagic, 8);
    w.put<std::uint32_t>(kFormatVersion);
    w.put(static_cast<std::uint32_t>(index.vocab_size()));
    w.put(static_cast<std::uint32_t>(index.doc_count()));
    for (auto off : offsets) {
        w.put(off);
    }
    w.raw(postings.bytes().data(), postings.size());
    for (const auto& id : index.doc_ids()) {
        w.varint(id.size());
        w.raw(id.data(), id.size());
    }
    write_bytes(path, w.bytes());
}

InvertedIndex read_index(const fs::path& path) {
    Reader r(read_file(path), path.string());
    check_magic(r, kIndexMagic, path, "index");
    const auto vocab = r.get<std::uint32_t>();
    const auto docs = r.get<std::uint32_t>();
    std::vector<std::uint64_t> offsets(static_cast<std::size_t>(vocab) + 1);
    for (auto& off : offsets) {
        off = r.get<std::uint64_t>();
    }
    const auto base = r.pos();
    std::vector<PostingList> lists(vocab);
    for (std::uint32_t t = 0; t < vocab; ++t) {
        if (offsets[t] > offsets[t + 1]) {
            throw FormatError(path.string() + ": posting offsets are not monotone");
        }
        lists[t].term = t;
        r.seek(base + offsets[t]);
        const auto end = base + offsets[t + 1];
        std::uint64_t doc = 0;
        bool first = true;
        while (r.pos() < end) {
            const auto gap = r.varint();
            doc = first ? gap : doc + gap;
            first = false;
            const auto w = r.get<float>();
            if (doc >= docs) {
                throw FormatError(path.string() + ": posting doc number out of range");
            }
            lists[t].postings.push_back({static_cast<DocNum>(doc), w});
        }
        if (r.pos() != end) {
            throw FormatError(path.string() + ": posting list overruns its offset range");
        }
    }
    r.seek(base + offsets.back());
    std::vector<std::string> ids(docs);
    for (auto& id : ids) {
        const auto len = r.varint();
        id.resize(len);
        r.raw(id.data(), len);
    }
    if (!r.at_end()) {
        throw FormatError(path.string() + ": trailing bytes after doc table");
    }
    try {
        return InvertedIndex(std::move(lists), std::move(ids));
    } catch (const std::invalid_argument& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::map<std::string, std::string> read_key_values(const fs::path& path) {
    auto in = open_in(path);
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) {
            line.resize(hash);
        }
        const auto body = trim(line);
        if (body.empty()) {
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw FormatError(where(path, lineno) + "expected key = value");
        }
        auto key = trim(std::string_view(body).substr(0, eq));
        auto value = trim(std::string_view(body).substr(eq + 1));
        if (key.empty()) {
            throw FormatError(where(path, lineno) + "empty key");
        }
        if (!kv.emplace(key, value).second) {
            throw FormatError(where(path, lineno) + "duplicate key '" + key + "'");
        }
    }
    return kv;
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    if constexpr (std::is_floating_point_v<T>) {
        try {
            std::size_t used = 0;
            out = static_cast<T>(std::stod(value, &used));
            if (used != value.size()) {
                throw std::invalid_argument("trailing");
            }
        } catch (const std::exception&) {
            throw std::invalid_argument("config key '" + key + "': not a number: '" + value + "'");
        }
    } else {
        auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
        if (ec != std::errc{} || ptr != value.data() + value.size()) {
            throw std::invalid_argument("config key '" + key + "': not an integer: '" + value + "'");
        }
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw std::invalid_argument("config key '" + key + "': not a boolean: '" + value + "'");
}

} // namespace

void apply_train_config(TrainConfig& c, const std::map<std::string, std::string>& kv,
                        const std::vector<std::string>& passthrough) {
    const std::set<std::string> skip(passthrough.begin(), passthrough.end());
    for (const auto& [key, value] : kv) {
        if (skip.count(key) != 0) {
            continue;
        }
        if (key == "learning_rate") c.learning_rate = parse_number<double>(key, value);
        else if (key == "batch_size") c.batch_size = parse_number<std::size_t>(key, value);
        else if (key == "total_steps") c.total_steps = parse_number<std::size_t>(key, value);
        else if (key == "peak_lambda") c.peak_lambda = parse_number<double>(key, value);
        else if (key == "warmup_steps") c.warmup_steps = parse_number<std::size_t>(key, value);
        else if (key == "df_refresh_interval") c.df_refresh_interval = parse_number<std::size_t>(key, value);
        else if (key == "df_sample_size") c.df_sample_size = parse_number<std::size_t>(key, value);
        else if (key == "hard_negatives") c.hard_negatives = parse_number<std::size_t>(key, value);
        else if (key == "hard_negative_pool") c.hard_negative_pool = parse_number<std::size_t>(key, value);
        else if (key == "alpha") c.activation.alpha = parse_number<double>(key, value);
        else if (key == "beta") c.activation.beta = parse_number<double>(key, value);
        else if (key == "regularizer") c.regularizer = regularizer_from_string(value);
        else if (key == "epsilon") c.epsilon = parse_number<double>(key, value);
        else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
        else if (key == "rank") c.rank = parse_number<std::size_t>(key, value);
        else if (key == "pin_penalties") c.pin_penalties = parse_bool(key, value);
        else if (key == "optimizer") c.optimizer = optimizer_from_string(value);
        else if (key == "max_grad_norm") c.max_grad_norm = parse_number<double>(key, value);
        else if (key == "tied_init") c.tied_init = parse_bool(key, value);
        else if (key == "precision") c.precision = precision_from_string(value);
        else throw std::invalid_argument("unknown config key '" + key + "'");
    }
}

} // namespace dfflops::io

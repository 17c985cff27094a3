#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dfflops/core.hpp"
#include "dfflops/encoder.hpp"
#include "dfflops/eval.hpp"
#include "dfflops/index.hpp"

namespace dfflops::io {

namespace fs = std::filesystem;

/// Raised for unreadable, truncated or malformed files.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Document {
    std::string id;
    std::string text;
};

/// JSON-lines, one {"id": str, "text": str} object per line. Blank lines are skipped.
std::vector<Document> read_corpus(const fs::path& path);
void write_corpus(const fs::path& path, const std::vector<Document>& docs);

/// One term per line; line number (0-based) is the term id.
Vocabulary read_vocab(const fs::path& path);
void write_vocab(const fs::path& path, const Vocabulary& vocab);

struct QueryRecord {
    std::string id;
    std::string text;
    std::string positive_doc; // empty when the file has only two columns
};

/// TSV `query_id<TAB>query_text[<TAB>positive_doc_id]`.
std::vector<QueryRecord> read_queries(const fs::path& path);
void write_queries(const fs::path& path, const std::vector<QueryRecord>& queries);

/// TREC qrels: `query_id 0 doc_id grade`.
Qrels read_qrels(const fs::path& path);
void write_qrels(const fs::path& path, const Qrels& qrels);

struct RunLine {
    std::string query_id;
    std::string doc_id;
    std::size_t rank;
    double score;
};

/// TREC run: `query_id Q0 doc_id rank score tag`.
void write_run(std::ostream& out, const std::vector<RunLine>& lines, const std::string& tag);
Run read_run(const fs::path& path);

/// JSON-lines {"id": ..., "vector": {"<term>": weight, ...}} in ascending term-id order.
void write_vectors(const fs::path& path, const std::vector<SparseVector>& vectors,
                   const Vocabulary& vocab);
std::vector<SparseVector> read_vectors(const fs::path& path, const Vocabulary& vocab);

/// Checkpoint layout (little-endian):
///   char[8]  "DFFLOPSC"
///   u32      version (1)
///   u64      vocabulary hash (Vocabulary::hash)
///   u32      |V|
///   u32      k
///   f32      U  [|V| * k], row-major
///   f32      Vp [|V| * k], row-major
///   f32      b  [|V|]
struct Checkpoint {
    std::uint64_t vocab_hash = 0;
    EncoderParams params;
};
void write_checkpoint(const fs::path& path, const EncoderParams& params, std::uint64_t vocab_hash);
Checkpoint read_checkpoint(const fs::path& path);

/// Index layout (little-endian):
///   char[8]  "DFFLOPSI"
///   u32      version (1)
///   u32      |V|
///   u32      doc_count
///   u64      offsets[|V| + 1]   byte offsets of each term's postings, relative to the posting block
///   posting block: per term, per posting: varint doc gap (first gap is the doc number itself),
///                  f32 weight
///   doc table: per document, varint byte length followed by the doc id bytes
void write_index(const fs::path& path, const InvertedIndex& index);
InvertedIndex read_index(const fs::path& path);

/// `key = value` lines; '#' starts a comment. Duplicate keys are an error.
std::map<std::string, std::string> read_key_values(const fs::path& path);

/// Applies key/value pairs to a TrainConfig; unknown keys raise std::invalid_argument
/// naming the key. Keys listed in `passthrough` are ignored here.
void apply_train_config(TrainConfig& config, const std::map<std::string, std::string>& kv,
                        const std::vector<std::string>& passthrough = {});

/// FNV-1a 64 of the file contents as 16 hex digits.
std::string file_digest(const fs::path& path);

std::string read_file(const fs::path& path);

} // namespace dfflops::io

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecn {

/// One row of a persona dataset: who is asking, what they struggle with,
/// and the advice-seeking question itself.
struct PersonaEntry {
    std::string id;
    std::string demographics;
    std::string difficulties;
    std::string query;

    bool operator==(const PersonaEntry&) const = default;
};

enum class DatasetFormat { Csv, Jsonl };

/// Raised for unreadable or malformed dataset files. `row()` is the 1-based
/// data row (0 when the error is not tied to a row).
class DatasetError : public std::runtime_error {
public:
    DatasetError(const std::string& what, std::size_t row = 0, std::string field = {})
        : std::runtime_error(what), row_(row), field_(std::move(field)) {}

    std::size_t row() const noexcept { return row_; }
    const std::string& field() const noexcept { return field_; }

private:
    std::size_t row_;
    std::string field_;
};

class DatasetNotFound : public DatasetError {
public:
    using DatasetError::DatasetError;
};

struct Violation {
    enum class Kind { EmptyField, DuplicateId, EmptyId };

    Kind kind;
    std::size_t index;  // 0-based position in the entry list
    std::string id;
    std::string field;  // for EmptyField
    std::string message;
};

DatasetFormat format_from_string(const std::string& name);
/// Picks the format from the extension (.csv, .jsonl/.ndjson).
DatasetFormat format_from_path(const std::filesystem::path& path);

std::vector<PersonaEntry> load_dataset(const std::filesystem::path& path, DatasetFormat format);
std::vector<PersonaEntry> parse_csv_dataset(const std::string& text);
std::vector<PersonaEntry> parse_jsonl_dataset(const std::string& text);

std::string write_csv_dataset(const std::vector<PersonaEntry>& entries);
std::string write_jsonl_dataset(const std::vector<PersonaEntry>& entries);

/// Lists every invariant violation; an empty result means the dataset is valid.
std::vector<Violation> validate_dataset(const std::vector<PersonaEntry>& entries);

/// Parses RFC-4180 CSV into rows of fields. Accepts LF or CRLF line ends.
std::vector<std::vector<std::string>> parse_csv(const std::string& text);
std::string csv_escape(const std::string& field);

std::string trim(std::string_view text);

}  // namespace ecn

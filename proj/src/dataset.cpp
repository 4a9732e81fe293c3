#include "ecn/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

namespace ecn {

namespace {

using json = nlohmann::json;

const char* const kFields[] = {"demographics", "difficulties", "query"};

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// Maps a normalized column name to the canonical field it fills, if any.
std::optional<std::string> canonical_column(const std::string& raw) {
    static const std::map<std::string, std::string> aliases = {
        {"id", "id"},
        {"demographics", "demographics"},
        {"difficulties", "difficulties"},
        {"query", "query"},
        {"queries", "query"},
        {"queries (advice seeking)", "query"},
    };
    auto it = aliases.find(lower(trim(raw)));
    if (it == aliases.end()) return std::nullopt;
    return it->second;
}

std::string read_file(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) {
        throw DatasetNotFound("dataset file not found: " + path.string());
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetNotFound("cannot open dataset file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string row_label(std::size_t row) { return "row " + std::to_string(row); }

void set_text_field(PersonaEntry& entry, const std::string& field, std::string value,
                    std::size_t row) {
    value = trim(value);
    if (value.empty()) {
        throw DatasetError(row_label(row) + ": missing field '" + field + "'", row, field);
    }
    if (field == "demographics") entry.demographics = std::move(value);
    else if (field == "difficulties") entry.difficulties = std::move(value);
    else entry.query = std::move(value);
}

// Synthesizes ids for entries without one and rejects duplicates.
void finalize_ids(std::vector<PersonaEntry>& entries, const std::vector<bool>& explicit_id) {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!explicit_id[i]) entries[i].id = "row-" + std::to_string(i + 1);
        if (!seen.insert(entries[i].id).second) {
            throw DatasetError(row_label(i + 1) + ": duplicate id '" + entries[i].id + "'", i + 1,
                               "id");
        }
    }
}

}  // namespace

std::string trim(std::string_view text) {
    auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    std::size_t b = 0, e = text.size();
    while (b < e && is_space(text[b])) ++b;
    while (e > b && is_space(text[e - 1])) --e;
    return std::string(text.substr(b, e - b));
}

DatasetFormat format_from_string(const std::string& name) {
    auto n = lower(trim(name));
    if (n == "csv") return DatasetFormat::Csv;
    if (n == "jsonl" || n == "ndjson") return DatasetFormat::Jsonl;
    throw DatasetError("unknown dataset format '" + name + "' (expected csv or jsonl)");
}

DatasetFormat format_from_path(const std::filesystem::path& path) {
    auto ext = lower(path.extension().string());
    if (ext == ".csv") return DatasetFormat::Csv;
    if (ext == ".jsonl" || ext == ".ndjson") return DatasetFormat::Jsonl;
    throw DatasetError("cannot infer dataset format from '" + path.string() +
                       "'; pass the format explicitly");
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false;
    bool field_was_quoted = false;
    std::size_t line = 1;

    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        field_was_quoted = false;
    };
    auto end_row = [&] {
        end_field();
        // A physically blank line yields one empty unquoted field; skip it.
        if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
        row.clear();
    };

    std::size_t i = 0;
    if (text.compare(0, 3, "\xEF\xBB\xBF") == 0) i = 3;
    for (; i < text.size(); ++i) {
        char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
        case '"':
            if (!field.empty() || field_was_quoted) {
                throw DatasetError("line " + std::to_string(line) +
                                   ": stray quote inside unquoted CSV field");
            }
            in_quotes = true;
            field_was_quoted = true;
            break;
        case ',':
            end_field();
            break;
        case '\r':
            if (i + 1 < text.size() && text[i + 1] == '\n') break;
            end_row();
            ++line;
            break;
        case '\n':
            end_row();
            ++line;
            break;
        default:
            if (field_was_quoted) {
                throw DatasetError("line " + std::to_string(line) +
                                   ": text after closing quote in CSV field");
            }
            field.push_back(c);
        }
    }
    if (in_quotes) throw DatasetError("unterminated quoted CSV field at end of input");
    if (!field.empty() || field_was_quoted || !row.empty()) end_row();
    return rows;
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos && !field.empty() &&
        field.front() != ' ' && field.back() != ' ') {
        return field;
    }
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += '"';
    return out;
}

std::vector<PersonaEntry> parse_csv_dataset(const std::string& text) {
    auto rows = parse_csv(text);
    if (rows.empty()) throw DatasetError("CSV dataset has no header row");

    std::map<std::string, std::size_t> column;
    for (std::size_t c = 0; c < rows[0].size(); ++c) {
        if (auto name = canonical_column(rows[0][c]); name && !column.count(*name)) {
            column[*name] = c;
        }
    }
    for (const char* f : kFields) {
        if (!column.count(f)) {
            throw DatasetError(std::string("CSV header is missing the '") + f + "' column", 0, f);
        }
    }

    std::vector<PersonaEntry> entries;
    std::vector<bool> explicit_id;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& cells = rows[r];
        PersonaEntry entry;
        for (const char* f : kFields) {
            std::size_t c = column[f];
            if (c >= cells.size()) {
                throw DatasetError(row_label(r) + ": missing field '" + f + "'", r, f);
            }
            set_text_field(entry, f, cells[c], r);
        }
        bool has_id = false;
        if (auto it = column.find("id"); it != column.end() && it->second < cells.size()) {
            entry.id = trim(cells[it->second]);
            has_id = !entry.id.empty();
        }
        entries.push_back(std::move(entry));
        explicit_id.push_back(has_id);
    }
    finalize_ids(entries, explicit_id);
    return entries;
}

std::vector<PersonaEntry> parse_jsonl_dataset(const std::string& text) {
    std::vector<PersonaEntry> entries;
    std::vector<bool> explicit_id;
    std::istringstream in(text);
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++row;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DatasetError(row_label(row) + ": invalid JSON: " + e.what(), row);
        }
        if (!obj.is_object()) throw DatasetError(row_label(row) + ": expected a JSON object", row);

        std::map<std::string, const json*> by_name;
        for (auto it = obj.begin(); it != obj.end(); ++it) {
            if (auto name = canonical_column(it.key()); name && !by_name.count(*name)) {
                by_name[*name] = &it.value();
            }
        }

        PersonaEntry entry;
        for (const char* f : kFields) {
            auto it = by_name.find(f);
            if (it == by_name.end() || it->second->is_null()) {
                throw DatasetError(row_label(row) + ": missing field '" + f + "'", row, f);
            }
            if (!it->second->is_string()) {
                throw DatasetError(row_label(row) + ": field '" + f + "' must be a string", row, f);
            }
            set_text_field(entry, f, it->second->get<std::string>(), row);
        }
        bool has_id = false;
        if (auto it = by_name.find("id"); it != by_name.end() && !it->second->is_null()) {
            const json& id = *it->second;
            if (id.is_string()) entry.id = trim(id.get<std::string>());
            else if (id.is_number_integer()) entry.id = id.dump();
            else throw DatasetError(row_label(row) + ": field 'id' must be a string", row, "id");
            has_id = !entry.id.empty();
        }
        entries.push_back(std::move(entry));
        explicit_id.push_back(has_id);
    }
    finalize_ids(entries, explicit_id);
    return entries;
}

std::vector<PersonaEntry> load_dataset(const std::filesystem::path& path, DatasetFormat format) {
    std::string text = read_file(path);
    return format == DatasetFormat::Csv ? parse_csv_dataset(text) : parse_jsonl_dataset(text);
}

std::string write_csv_dataset(const std::vector<PersonaEntry>& entries) {
    std::string out = "id,demographics,difficulties,query\n";
    for (const auto& e : entries) {
        out += csv_escape(e.id) + ',' + csv_escape(e.demographics) + ',' +
               csv_escape(e.difficulties) + ',' + csv_escape(e.query) + '\n';
    }
    return out;
}

std::string write_jsonl_dataset(const std::vector<PersonaEntry>& entries) {
    std::string out;
    for (const auto& e : entries) {
        json obj = {{"id", e.id},
                    {"demographics", e.demographics},
                    {"difficulties", e.difficulties},
                    {"query", e.query}};
        out += obj.dump() + '\n';
    }
    return out;
}

std::vector<Violation> validate_dataset(const std::vector<PersonaEntry>& entries) {
    std::vector<Violation> report;
    std::map<std::string, std::size_t> first_seen;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        if (trim(e.id).empty()) {
            report.push_back({Violation::Kind::EmptyId, i, e.id, "id",
                              "entry " + std::to_string(i + 1) + ": empty id"});
        } else if (auto [it, inserted] = first_seen.emplace(e.id, i); !inserted) {
            report.push_back({Violation::Kind::DuplicateId, i, e.id, "id",
                              "entry " + std::to_string(i + 1) + ": duplicate id '" + e.id +
                                  "' (first used by entry " + std::to_string(it->second + 1) +
                                  ")"});
        }
        const std::pair<const char*, const std::string*> fields[] = {
            {"demographics", &e.demographics},
            {"difficulties", &e.difficulties},
            {"query", &e.query},
        };
        for (auto [name, value] : fields) {
            if (trim(*value).empty()) {
                report.push_back({Violation::Kind::EmptyField, i, e.id, name,
                                  "entry '" + e.id + "': field '" + name + "' is empty"});
            }
        }
    }
    return report;
}

}  // namespace ecn

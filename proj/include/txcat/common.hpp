#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace txcat {

// Error families map onto CLI exit codes: ConfigError -> 2, DataError -> 3,
// ParityError / IntegrityError -> 4, anything else -> 5.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- calendar dates -------------------------------------------------------
// Dates are integer day counts since 1970-01-01 (proleptic Gregorian).

int64_t days_from_civil(int year, int month, int day);
void civil_from_days(int64_t days, int& year, int& month, int& day);
bool valid_civil(int year, int month, int day);

// Strict "YYYY-MM-DD"; throws DataError on malformed or invalid dates.
int64_t parse_date(std::string_view iso);
std::string format_date(int64_t days);

// --- currency -------------------------------------------------------------
// Amounts are signed integer cents. Positive = debit, negative = credit.

// Accepts [+-]digits[.d or .dd]; throws DataError otherwise.
int64_t parse_amount_cents(std::string_view text);
std::string format_amount(int64_t cents);
inline double cents_to_value(int64_t cents) { return static_cast<double>(cents) / 100.0; }

// --- hashing --------------------------------------------------------------

std::string sha256_hex(std::string_view bytes);
std::string sha256_hex_file(const std::string& path);

// Stable 16-hex-char group identifier.
std::string group_id(std::string_view account_id, std::string_view rendered_text);

// --- misc -----------------------------------------------------------------

// Splitmix64 step; used to derive per-account / per-worker seeds.
uint64_t mix_seed(uint64_t seed, uint64_t index);

std::vector<std::string> split_ws(std::string_view s);
std::string read_file(const std::string& path);
void write_file_atomic(const std::string& path, std::string_view contents);

}  // namespace txcat

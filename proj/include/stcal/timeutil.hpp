#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "stcal/errors.hpp"

namespace stcal {

/// Whole hours since 1970-01-01T00:00:00Z.
using HourStamp = std::int64_t;

namespace detail {

// Howard Hinnant's civil-calendar algorithms.
constexpr std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

struct Civil {
  std::int64_t year;
  unsigned month;
  unsigned day;
};

constexpr Civil civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  return {y + (m <= 2), m, d};
}

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace detail

/**
 * @brief Parse an hourly ISO-8601 UTC timestamp.
 *
 * Accepts `YYYY-MM-DDTHH:MM:SSZ`, `YYYY-MM-DDTHH:MM:SS`, `YYYY-MM-DDTHH:MMZ`
 * and `YYYY-MM-DD HH:MM:SS`. Minutes and seconds must be zero.
 */
inline HourStamp parse_timestamp(std::string_view text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  std::string buf(text);
  while (!buf.empty() && (buf.back() == 'Z' || buf.back() == 'z' || buf.back() == ' ' || buf.back() == '\r')) buf.pop_back();
  int got = std::sscanf(buf.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &s);
  if (got < 6 || (sep != 'T' && sep != ' ')) {
    throw DataError("malformed timestamp '" + std::string(text) + "'");
  }
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi != 0 || s != 0) {
    throw DataError("timestamp '" + std::string(text) + "' is not on an hourly boundary");
  }
  return detail::days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * 24 + h;
}

inline std::string format_timestamp(HourStamp stamp) {
  const std::int64_t days = detail::floor_div(stamp, 24);
  const int hour = static_cast<int>(stamp - days * 24);
  const auto c = detail::civil_from_days(days);
  char out[64];
  std::snprintf(out, sizeof(out), "%04lld-%02u-%02uT%02d:00:00Z", static_cast<long long>(c.year), c.month,
                c.day, hour);
  return out;
}

/// Calendar month (1-12) of a timestamp.
inline unsigned month_of(HourStamp stamp) {
  return detail::civil_from_days(detail::floor_div(stamp, 24)).month;
}

/// Hour of day (0-23) of a timestamp.
inline int hour_of_day(HourStamp stamp) {
  return static_cast<int>(stamp - detail::floor_div(stamp, 24) * 24);
}

/// Southern-hemisphere meteorological seasons.
enum class Season { Summer, Fall, Winter, Spring };

inline Season season_of(HourStamp stamp) {
  switch (month_of(stamp)) {
    case 12: case 1: case 2: return Season::Summer;
    case 3: case 4: case 5: return Season::Fall;
    case 6: case 7: case 8: return Season::Winter;
    default: return Season::Spring;
  }
}

inline const char* season_name(Season s) {
  switch (s) {
    case Season::Summer: return "summer";
    case Season::Fall: return "fall";
    case Season::Winter: return "winter";
    case Season::Spring: return "spring";
  }
  return "unknown";
}

}  // namespace stcal

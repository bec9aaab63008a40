#pragma once

#include <charconv>
#include <chrono>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

namespace hydroq {

using Date = std::chrono::sys_days;

/// Parses YYYY-MM-DD. Returns nullopt on malformed or invalid dates.
inline std::optional<Date> parse_date(std::string_view s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
    int y = 0;
    unsigned m = 0, d = 0;
    auto num = [&](std::size_t pos, std::size_t len, auto& out) {
        auto [p, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, out);
        return ec == std::errc{} && p == s.data() + pos + len;
    };
    if (!num(0, 4, y) || !num(5, 2, m) || !num(8, 2, d)) return std::nullopt;
    std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                    std::chrono::day{d}};
    if (!ymd.ok()) return std::nullopt;
    return Date{ymd};
}

inline std::string format_date(Date date) {
    std::chrono::year_month_day ymd{date};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", int(ymd.year()), unsigned(ymd.month()),
                  unsigned(ymd.day()));
    return buf;
}

inline Date make_date(int y, unsigned m, unsigned d) {
    return Date{std::chrono::year_month_day{std::chrono::year{y}, std::chrono::month{m},
                                            std::chrono::day{d}}};
}

/// Zero-based day of year.
inline int day_of_year(Date date) {
    std::chrono::year_month_day ymd{date};
    Date jan1{ymd.year() / std::chrono::January / 1};
    return int((date - jan1).count());
}

inline int year_length(Date date) {
    return std::chrono::year_month_day{date}.year().is_leap() ? 366 : 365;
}

} // namespace hydroq

/*
 * Copyright (C) 2026 hivoc contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#ifndef HIVOC_SCHEDULE_HPP
#define HIVOC_SCHEDULE_HPP

#include "hivoc/model.hpp"

#include <cmath>
#include <vector>

namespace hivoc {

/// Piecewise-constant controls: value i applies on [ i*dt, (i+1)*dt ),
/// right-continuous at the switch times. Lookups past the last knot
/// return the final value.
struct ControlSchedule {
    int n_int = 0;
    double dt = 0.0;
    std::vector<ControlVector> values;

    static ControlSchedule zero(int n_int, double dt)
    {
        return {n_int, dt, std::vector<ControlVector>(static_cast<std::size_t>(n_int))};
    }

    static ControlSchedule constant(int n_int, double dt, ControlVector u)
    {
        return {n_int, dt, std::vector<ControlVector>(static_cast<std::size_t>(n_int), u)};
    }

    double t_final() const { return n_int * dt; }

    ControlVector at(double t) const
    {
        if (values.empty()) {
            return {};
        }
        int i = static_cast<int>(std::floor(t / dt));
        i = std::max(0, std::min(i, n_int - 1));
        return values[static_cast<std::size_t>(i)];
    }

    bool nonnegative() const
    {
        for (const ControlVector& u : values) {
            if (u.u_P < 0.0 || u.u_T < 0.0) {
                return false;
            }
        }
        return true;
    }
};

} // namespace hivoc

#endif

#ifndef FLUXDG_FLUXDG_HPP
#define FLUXDG_FLUXDG_HPP

#include "fluxdg/analysis.hpp"
#include "fluxdg/forms.hpp"
#include "fluxdg/mesh.hpp"
#include "fluxdg/refelem.hpp"
#include "fluxdg/study.hpp"
#include "fluxdg/system.hpp"

#endif  // FLUXDG_FLUXDG_HPP

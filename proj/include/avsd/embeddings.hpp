#pragma once

#include <span>
#include <vector>

#include "avsd/layers.hpp"

namespace avsd {

template <typename T>
struct QuestionEmbedding {
  Var<T> states;  // r_Q, [n_Q x d_Q]: every hidden state of the question LSTM
  Var<T> final;   // last hidden state, [d_Q]
};

/// Word embedding followed by a one-layer LSTM. Throws ContractError on an
/// empty question or an id outside the embedding table.
template <typename T>
QuestionEmbedding<T> embed_question(Graph<T>& g, Var<T> word_table, const LstmLayer& lstm,
                                    std::span<const int> ids, const Dropout& dropout = {});

/// Each pair's token stream runs through the stacked pair LSTM, its last
/// hidden state is r_t; r_1..r_T run through the history LSTM whose last hidden
/// state is r_H. No pairs gives the zero vector.
template <typename T>
Var<T> embed_history(Graph<T>& g, Var<T> word_table, std::span<const LstmLayer> pair_layers,
                     const LstmLayer& history, std::span<const std::span<const int>> pairs,
                     const Dropout& dropout = {});

/// Pointwise conv shared by every frame and position. Frames arrive stacked
/// as rows, [F*n_V x C] -> [F*n_V x d_V]; frame f owns rows [f*n_V, (f+1)*n_V).
template <typename T>
Var<T> embed_video(Graph<T>& g, const Linear& conv, Var<T> frames);

/// Pointwise conv over audio steps: [n_A x C] -> [n_A x d_A].
template <typename T>
Var<T> embed_audio(Graph<T>& g, const Linear& conv, Var<T> audio);

}  // namespace avsd

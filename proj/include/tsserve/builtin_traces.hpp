#pragma once

#include <sstream>
#include <string_view>

#include "tsserve/workload.hpp"

namespace tsserve {

// Scripted plans for the eleven benchmark robot tasks plus three chatbot
// stories. Execution profiles are declared on the first use of each skill.
inline constexpr std::string_view kBuiltinTracesJsonl = R"JSONL({"trace_id":1,"category":"drone_normal","description":"Look for the cat","prompt_tokens":240,"urgency":{"kind":"normal","beta":1.0,"alpha":-2.0,"ert_s":1.0},"plan":[{"name":"s","token_count":5,"params":[],"text":"s('cat');","exec_profile":{"kind":"sampled","samples_s":[2.1,3.4,5.2,6.8],"labels":["front","side","behind","absent"]}},{"name":"g","token_count":5,"params":[],"text":"g('cat');","exec_profile":{"kind":"sampled","samples_s":[2.4,3.1,4.3],"labels":["near","mid","far"]}},{"name":"tp","token_count":3,"params":[],"text":"tp();","exec_profile":{"kind":"constant","mean_s":0.6}},{"name":"p","token_count":7,"params":[],"text":"p('Found the cat');","exec_profile":{"kind":"constant","mean_s":0.001}}]}
{"trace_id":2,"category":"drone_normal","description":"Check for keys or wallets","prompt_tokens":260,"urgency":{"kind":"normal","beta":1.0,"alpha":-2.0,"ert_s":1.0},"plan":[{"name":"iv","token_count":5,"params":[],"text":"iv('keys');","exec_profile":{"kind":"constant","mean_s":0.02}},{"name":"p","token_count":8,"params":[],"text":"p('Keys are on the table');"},{"name":"iv","token_count":5,"params":[],"text":"iv('wallet');"},{"name":"p","token_count":7,"params":[],"text":"p('No wallet in view');"}]}
{"trace_id":3,"category":"drone_normal","description":"Check the book on the cabinet","prompt_tokens":250,"urgency":{"kind":"normal","beta":1.0,"alpha":-2.0,"ert_s":1.0},"plan":[{"name":"mu","token_count":4,"params":[50],"exec_profile":{"kind":"parametric","intercept_s":0.9,"coefficients":[0.02]}},{"name":"tc","token_count":4,"params":[90],"exec_profile":{"kind":"parametric","intercept_s":0.6,"coefficients":[0.011]}},{"name":"s","token_count":5,"params":[],"text":"s('book');"},{"name":"p","token_count":9,"params":[],"text":"p('The book is on the cabinet');"}]}
{"trace_id":4,"category":"drone_normal","description":"Find a toy under the bed","prompt_tokens":230,"urgency":{"kind":"normal","beta":1.0,"alpha":-2.0,"ert_s":1.0},"plan":[{"name":"md","token_count":4,"params":[40],"exec_profile":{"kind":"parametric","intercept_s":0.9,"coefficients":[0.02]}},{"name":"s","token_count":5,"params":[],"text":"s('toy');"},{"name":"g","token_count":5,"params":[],"text":"g('toy');"},{"name":"tp","token_count":3,"params":[],"text":"tp();"},{"name":"p","token_count":8,"params":[],"text":"p('Toy found under the bed');"}]}
{"trace_id":5,"category":"drone_normal","description":"Find a tool for cutting paper","prompt_tokens":270,"urgency":{"kind":"normal","beta":1.0,"alpha":-2.0,"ert_s":1.0},"plan":[{"name":"sa","token_count":8,"params":[],"text":"sa('tool for cutting paper');","exec_profile":{"kind":"sampled","samples_s":[3.2,4.7,6.9],"labels":["front","side","behind"]}},{"name":"g","token_count":6,"params":[],"text":"g('scissors');"},{"name":"p","token_count":6,"params":[],"text":"p('Scissors located');"}]}
{"trace_id":6,"category":"drone_urgent","description":"Avoiding human injury","prompt_tokens":180,"urgency":{"kind":"urgent","beta":2.0,"alpha":-6.67,"ert_s":0.2},"plan":[{"name":"mb","token_count":4,"params":[100],"exec_profile":{"kind":"parametric","intercept_s":0.9,"coefficients":[0.02]}},{"name":"mu","token_count":4,"params":[60]}]}
{"trace_id":7,"category":"drone_urgent","description":"Preventing potential collision","prompt_tokens":170,"urgency":{"kind":"urgent","beta":2.0,"alpha":-6.67,"ert_s":0.2},"plan":[{"name":"mu","token_count":4,"params":[80]},{"name":"mb","token_count":4,"params":[50]},{"name":"tc","token_count":4,"params":[45]}]}
{"trace_id":8,"category":"drone_urgent","description":"Evading animal pursuit","prompt_tokens":190,"urgency":{"kind":"urgent","beta":2.0,"alpha":-6.67,"ert_s":0.2},"plan":[{"name":"mu","token_count":4,"params":[120]},{"name":"mf","token_count":4,"params":[200],"exec_profile":{"kind":"parametric","intercept_s":0.9,"coefficients":[0.02]}},{"name":"tc","token_count":4,"params":[180]}]}
{"trace_id":9,"category":"arm_complex","description":"Object stacking","prompt_tokens":420,"urgency":{"kind":"normal","beta":1.0,"alpha":-2.0,"ert_s":1.0},"plan":[{"name":"check","token_count":6,"params":[],"text":"check('red_box');","exec_profile":{"kind":"constant","mean_s":0.8}},{"name":"pick","token_count":6,"params":[],"text":"pick('red_box');","exec_profile":{"kind":"sampled","samples_s":[3.6,4.2,5.0],"labels":["near","mid","far"]}},{"name":"place","token_count":9,"params":[],"text":"place('red_box','table');","exec_profile":{"kind":"sampled","samples_s":[3.9,4.5,5.3],"labels":["near","mid","far"]}},{"name":"check","token_count":6,"params":[],"text":"check('blue_box');"},{"name":"pick","token_count":6,"params":[],"text":"pick('blue_box');"},{"name":"place","token_count":10,"params":[],"text":"place('blue_box','red_box');"},{"name":"check","token_count":6,"params":[],"text":"check('green_box');"},{"name":"pick","token_count":6,"params":[],"text":"pick('green_box');"},{"name":"place","token_count":10,"params":[],"text":"place('green_box','blue_box');"},{"name":"move_home","token_count":4,"params":[],"text":"move_home();","exec_profile":{"kind":"constant","mean_s":2.4}}]}
{"trace_id":10,"category":"arm_complex","description":"Desk cleaning","prompt_tokens":450,"urgency":{"kind":"normal","beta":1.0,"alpha":-2.0,"ert_s":1.0},"plan":[{"name":"check","token_count":5,"params":[],"text":"check('desk');"},{"name":"pick","token_count":5,"params":[],"text":"pick('cup');"},{"name":"place","token_count":8,"params":[],"text":"place('cup','tray');"},{"name":"pick","token_count":5,"params":[],"text":"pick('pen');"},{"name":"place","token_count":8,"params":[],"text":"place('pen','holder');"},{"name":"pick","token_count":5,"params":[],"text":"pick('paper');"},{"name":"place","token_count":8,"params":[],"text":"place('paper','bin');"},{"name":"pick","token_count":5,"params":[],"text":"pick('book');"},{"name":"place","token_count":8,"params":[],"text":"place('book','shelf');"},{"name":"wipe","token_count":5,"params":[],"text":"wipe('desk');","exec_profile":{"kind":"sampled","samples_s":[6.2,7.4],"labels":["clear","cluttered"]}},{"name":"pick","token_count":6,"params":[],"text":"pick('bottle');"},{"name":"place","token_count":8,"params":[],"text":"place('bottle','bin');"},{"name":"wipe","token_count":6,"params":[],"text":"wipe('keyboard');"},{"name":"check","token_count":5,"params":[],"text":"check('desk');"},{"name":"move_home","token_count":4,"params":[],"text":"move_home();"}]}
{"trace_id":11,"category":"arm_complex","description":"Fruit and vegetable classification","prompt_tokens":430,"urgency":{"kind":"normal","beta":1.0,"alpha":-2.0,"ert_s":1.0},"plan":[{"name":"check","token_count":6,"params":[],"text":"check('basket');"},{"name":"pick","token_count":5,"params":[],"text":"pick('apple');"},{"name":"place","token_count":9,"params":[],"text":"place('apple','fruit_bin');"},{"name":"pick","token_count":6,"params":[],"text":"pick('carrot');"},{"name":"place","token_count":9,"params":[],"text":"place('carrot','veg_bin');"},{"name":"pick","token_count":5,"params":[],"text":"pick('banana');"},{"name":"place","token_count":9,"params":[],"text":"place('banana','fruit_bin');"},{"name":"pick","token_count":6,"params":[],"text":"pick('tomato');"},{"name":"place","token_count":9,"params":[],"text":"place('tomato','veg_bin');"},{"name":"move_home","token_count":4,"params":[],"text":"move_home();"}]}
{"trace_id":101,"category":"chatbot","description":"Story: a lighthouse keeper","prompt_tokens":60,"urgency":{"kind":"normal","beta":1.0,"alpha":-2.0,"ert_s":1.0},"plan":[{"name":"read","params":[19],"token_count":25,"text":"The old keeper climbed the spiral stairs every evening before the storm rolled in from the gray northern sea.","exec_profile":{"kind":"parametric","intercept_s":0.0,"coefficients":[0.2]}},{"name":"read","params":[15],"token_count":20,"text":" He polished the great lens until it gleamed like a second moon above the rocks."},{"name":"read","params":[16],"token_count":21,"text":" Ships had always trusted his light, even on nights when the fog swallowed the whole coast.\n\n"},{"name":"read","params":[18],"token_count":23,"text":" One winter night the lamp flickered and died just as a small fishing boat drifted toward the reef."},{"name":"read","params":[16],"token_count":21,"text":" Without hesitating, he lit every lantern he owned and carried them out along the slippery breakwater."},{"name":"read","params":[14],"token_count":18,"text":" By dawn the boat was safe in the harbor, and the keeper finally slept."}]}
{"trace_id":102,"category":"chatbot","description":"Story: a robot gardener","prompt_tokens":60,"urgency":{"kind":"normal","beta":1.0,"alpha":-2.0,"ert_s":1.0},"plan":[{"name":"read","params":[15],"token_count":20,"text":"Every morning the little robot rolled between the tomato vines and counted the ripening fruit."},{"name":"read","params":[18],"token_count":23,"text":" It had learned that bees arrived at nine and that the sparrows preferred the shade near the fence.\n\n"},{"name":"read","params":[17],"token_count":22,"text":" When a late frost was forecast, the robot spent the night draping blankets over each fragile plant."},{"name":"read","params":[18],"token_count":23,"text":" The family woke to find the garden untouched by ice and the robot quietly recharging in the shed."},{"name":"read","params":[15],"token_count":20,"text":" Nobody had asked it to help, but it had decided the garden was worth protecting."}]}
{"trace_id":103,"category":"chatbot","description":"Story: a map in the attic","prompt_tokens":60,"urgency":{"kind":"normal","beta":1.0,"alpha":-2.0,"ert_s":1.0},"plan":[{"name":"read","params":[14],"token_count":18,"text":"Mia found the map folded inside a cookbook that had belonged to her grandmother."},{"name":"read","params":[16],"token_count":21,"text":" Faded ink traced a path from the old mill to a hollow oak beyond the river.\n\n"},{"name":"read","params":[15],"token_count":20,"text":" She followed it on a bright Saturday, counting steps and checking landmarks as she walked."},{"name":"read","params":[16],"token_count":21,"text":" Inside the oak she found a tin box holding letters, photographs, and a single brass key."},{"name":"read","params":[14],"token_count":18,"text":" The key opened nothing she could find, which made the mystery even more delightful."}]}
)JSONL";

inline const TraceLibrary& builtin_library() {
    static const TraceLibrary lib = [] {
        std::istringstream in{std::string(kBuiltinTracesJsonl)};
        return parse_trace_library(in, "<builtin>");
    }();
    return lib;
}

}  // namespace tsserve

//! The FIFO key queue: filling, wrap-around, masking by video id and the
//! neighbor / remainder split used by the cycle loss.

use cyclecon::queue::{NeighborSample, QueueState};
use cyclecon::tensor::Tensor;

fn main() -> cyclecon::Result<()> {
    let mut queue = QueueState::new(8, 2)?;
    for batch in 0..5u32 {
        let keys = Tensor::matrix(3, 2, vec![batch as f32, 1.0, batch as f32, 2.0, batch as f32, 3.0])?
            .l2_normalized()?;
        let vids = [batch * 3, batch * 3 + 1, batch * 3 + 2];
        queue.enqueue_dequeue(&keys, &vids)?;
        let held: Vec<u32> = queue.slots_oldest_first().map(|s| queue.video_id(s)).collect();
        println!("after batch {batch}: fill {} write_ptr {} videos {held:?}", queue.fill(), queue.write_ptr());
    }

    let current_batch = [12u32, 13];
    println!("unmasked slots for batch {current_batch:?}: {:?}", queue.unmasked_slots(&current_batch));
    match queue.sample_neighbor_split(3, &current_batch, 42)? {
        NeighborSample::Ready(split) => println!(
            "U slots {:?}, remainder slots {:?}, masked {}",
            split.u_indices, split.remainder_indices, split.masked
        ),
        NeighborSample::Warmup { unmasked, required } => {
            println!("warming up: {unmasked} usable slots, {required} needed")
        }
    }
    Ok(())
}
